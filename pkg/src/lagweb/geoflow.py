"""Geodesic flow of positive Lagrangian planes in diagonalizing coordinates.

A geodesic through the plane of ``base`` with quadratic Hamiltonian
``h(x) = sum a_j x_j^2`` (written in the adapted orthonormal basis) reduces
to the scalar system

    g_j' = -4 a_j tan(phi),      g_j(0) = 1,
    th_j' = -2 a_j / g_j,        th_j(0) = 0,
    phi(t) = phase0 + sum_j th_j(t),

where g_j is the squared stretch of the j-th frame direction and th_j its
accumulated rotation angle.  The plane at time t is spanned by
sqrt(g_j) e^{i th_j} u_j for u_j the adapted basis pushed into C^n.

``frame_ode_oracle`` integrates the full matrix evolution

    dPsi/dt = -2 (i + tan(phi)) Psi G^{-1} diag(a),    G = Re(Psi^H Psi),

with phi read off as arg det Psi; it never assumes the diagonal reduction
and exists to cross-check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, PhaseBlowup
from .laggrass import LagrangianFrame, make_frame
from .numkernel import IntegratorConfig, integrate_rk4

PHASE_MARGIN = 1e-6   # |phi| >= pi/2 - margin aborts the flow
METRIC_FLOOR = 1e-9   # g_j below this signals bad input


@dataclass(frozen=True, eq=False)
class GeodesicSpec:
    """Initial plane, adapted basis, Hamiltonian coefficients, base phase."""

    base: LagrangianFrame
    adapted_basis: np.ndarray  # (n, n) real orthogonal
    coefficients: np.ndarray   # (n,) the a_j
    phase0: float

    def __post_init__(self):
        a = np.array(self.coefficients, dtype=float)
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "coefficients", a)
        basis = np.array(self.adapted_basis, dtype=float)
        if np.max(np.abs(basis.T @ basis - np.eye(basis.shape[0]))) > 1e-8:
            raise ValueError("adapted basis must be orthogonal")
        if np.linalg.det(basis) < 0.0:
            raise ValueError("adapted basis must have determinant +1")
        basis.setflags(write=False)
        object.__setattr__(self, "adapted_basis", basis)

    @classmethod
    def from_frame(cls, base: LagrangianFrame, coefficients,
                   adapted_basis=None) -> "GeodesicSpec":
        n = base.n
        basis = np.eye(n) if adapted_basis is None else np.asarray(adapted_basis, float)
        return cls(base=base, adapted_basis=basis,
                   coefficients=np.asarray(coefficients, float), phase0=base.phase)

    @property
    def n(self) -> int:
        return self.base.n

    def frame_directions(self) -> np.ndarray:
        """Complex orthonormal vectors u_j = F0 @ adapted_basis[:, j]."""
        return self.base.columns @ self.adapted_basis


@dataclass(frozen=True, eq=False)
class GeodesicState:
    g: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True, eq=False)
class GeodesicTrajectory:
    """Uniformly sampled (g, theta) history over [0, 1]."""

    spec: GeodesicSpec
    times: np.ndarray   # (m+1,)
    g: np.ndarray       # (m+1, n)
    theta: np.ndarray   # (m+1, n)

    @property
    def phases(self) -> np.ndarray:
        return self.spec.phase0 + self.theta.sum(axis=1)

    @property
    def samples(self):
        return [(float(t), GeodesicState(self.g[i], self.theta[i]))
                for i, t in enumerate(self.times)]

    def grid_index(self, t: float) -> int:
        h = self.times[1] - self.times[0]
        i = int(round((t - self.times[0]) / h))
        if not 0 <= i < len(self.times) or abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"t = {t} is not a sample time")
        return i

    def interpolate(self, t: float):
        """Linear interpolation of (g, theta) for off-grid t in [0, 1]."""
        ts = self.times
        if not ts[0] <= t <= ts[-1]:
            raise ValueError("t outside trajectory range")
        j = min(int((t - ts[0]) / (ts[1] - ts[0])), len(ts) - 2)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return ((1 - w) * self.g[j] + w * self.g[j + 1],
                (1 - w) * self.theta[j] + w * self.theta[j + 1])


def _scalar_rhs(a: np.ndarray, phase0: float):
    n = a.size

    def rhs(t, y):
        g = y[:n]
        phi = phase0 + y[n:].sum()
        if abs(phi) >= 0.5 * math.pi - PHASE_MARGIN:
            raise PhaseBlowup(f"phase reached {phi:.6f} at t = {t:.4f}", t)
        if g.min() < METRIC_FLOOR:
            raise NonFiniteState(f"metric coefficient collapsed at t = {t:.4f}")
        out = np.empty(2 * n)
        out[:n] = (-4.0 * math.tan(phi)) * a
        out[n:] = (-2.0) * a / g
        return out

    return rhs


def geodesic_ivp(spec: GeodesicSpec, config: IntegratorConfig = IntegratorConfig()) -> GeodesicTrajectory:
    """Integrate the scalar geodesic system from (g, theta) = (1, 0)."""
    n = spec.n
    y0 = np.concatenate([np.ones(n), np.zeros(n)])
    ts, ys = integrate_rk4(_scalar_rhs(spec.coefficients, spec.phase0), y0, 0.0, 1.0, config)
    traj = GeodesicTrajectory(spec=spec, times=ts, g=ys[:, :n], theta=ys[:, n:])
    phases = traj.phases
    if traj.g.min() <= 0.0:
        raise NonFiniteState("metric coefficient lost positivity")
    if np.max(np.abs(phases)) >= 0.5 * math.pi - PHASE_MARGIN:
        i = int(np.argmax(np.abs(phases)))
        raise PhaseBlowup(f"phase reached {phases[i]:.6f}", float(ts[i]))
    return traj


def horizontal_frame(traj: GeodesicTrajectory, t: float) -> LagrangianFrame:
    """Frame spanned by sqrt(g_j) e^{i th_j} u_j at a sample time.

    Revalidation rescales the sqrt(g) factors away; the returned phase must
    agree with phase0 + sum th_j to 1e-8 or the reduction itself is broken.
    """
    i = traj.grid_index(t)
    w = np.sqrt(traj.g[i]) * np.exp(1j * traj.theta[i])
    frame = make_frame(traj.spec.base.ambient, traj.spec.frame_directions() * w[np.newaxis, :])
    expected = traj.spec.phase0 + traj.theta[i].sum()
    if abs(frame.phase - expected) > 1e-8:
        raise AssertionError(
            f"frame phase {frame.phase:.12f} != reconstructed {expected:.12f}"
        )
    return frame


def thin_trajectory(traj: GeodesicTrajectory, stride: int) -> GeodesicTrajectory:
    """Subsample onto every stride-th grid point (stride must divide the steps).

    The samples are exact flow samples, so the result is a valid coarser
    trajectory; large meshes in n >= 3 are built on thinned grids.
    """
    steps = len(traj.times) - 1
    if stride < 1 or steps % stride != 0:
        raise ValueError(f"stride {stride} does not divide {steps} steps")
    return GeodesicTrajectory(spec=traj.spec, times=traj.times[::stride],
                              g=traj.g[::stride], theta=traj.theta[::stride])


def phase_along(traj: GeodesicTrajectory):
    """Per-sample (t, phi, dphi/dt) with dphi/dt = -2 sum_j a_j / g_j."""
    a = traj.spec.coefficients
    dphi = -2.0 * (a[np.newaxis, :] / traj.g).sum(axis=1)
    return traj.times, traj.phases, dphi


def _frame_rhs(a: np.ndarray, n: int):
    def rhs(t, y):
        psi = (y[: n * n] + 1j * y[n * n:]).reshape(n, n)
        det = complex(np.linalg.det(psi))
        phi = math.atan2(det.imag, det.real)
        if abs(phi) >= 0.5 * math.pi - PHASE_MARGIN:
            raise PhaseBlowup(f"oracle phase reached {phi:.6f} at t = {t:.4f}", t)
        gram = (psi.conj().T @ psi).real
        try:
            ginv = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise NonFiniteState(f"oracle Gram matrix singular at t = {t:.4f}") from exc
        dpsi = (-2.0 * (1j + math.tan(phi))) * ((psi @ ginv) * a[np.newaxis, :])
        return np.concatenate([dpsi.real.ravel(), dpsi.imag.ravel()])

    return rhs


def frame_ode_oracle(spec: GeodesicSpec, config: IntegratorConfig = IntegratorConfig()):
    """Integrate the full frame evolution; returns (times, frames).

    frames[i] is the complex n x n matrix of frame vectors at times[i];
    nothing here uses the (g, theta) reduction.
    """
    n = spec.n
    psi0 = spec.frame_directions()
    y0 = np.concatenate([psi0.real.ravel(), psi0.imag.ravel()])
    ts, ys = integrate_rk4(_frame_rhs(spec.coefficients, n), y0, 0.0, 1.0, config)
    frames = (ys[:, : n * n] + 1j * ys[:, n * n:]).reshape(-1, n, n)
    return ts, frames


def two_route_deviation(spec: GeodesicSpec, config: IntegratorConfig = IntegratorConfig(),
                        frame_stride: int = 20):
    """Sup deviation between the scalar route and the frame oracle.

    Returns (g_deviation, angle_deviation, gram_offdiag): the metric
    comparison runs over every sample, plane angles over a strided subset.
    """
    traj = geodesic_ivp(spec, config)
    ts, frames = frame_ode_oracle(spec, config)
    gram = np.einsum("sij,sik->sjk", frames.conj(), frames).real
    g_oracle = np.einsum("sjj->sj", gram)
    g_dev = float(np.max(np.abs(g_oracle - traj.g)))
    off = gram - g_oracle[:, :, np.newaxis] * np.eye(spec.n)[np.newaxis, :, :]
    gram_offdiag = float(np.max(np.abs(off)))

    directions = spec.frame_directions()
    angle_dev = 0.0
    for i in range(0, len(ts), frame_stride):
        w = np.sqrt(traj.g[i]) * np.exp(1j * traj.theta[i])
        angle_dev = max(angle_dev, _plane_angle(directions * w[np.newaxis, :], frames[i]))
    angle_dev = max(angle_dev, _plane_angle(
        directions * (np.sqrt(traj.g[-1]) * np.exp(1j * traj.theta[-1]))[np.newaxis, :],
        frames[-1]))
    return g_dev, angle_dev, gram_offdiag


def _plane_angle(fa: np.ndarray, fb: np.ndarray) -> float:
    """Largest principal angle between the real spans of two column sets."""
    qa, _ = np.linalg.qr(np.vstack([fa.real, fa.imag]))
    qb, _ = np.linalg.qr(np.vstack([fb.real, fb.imag]))
    resid = qb - qa @ (qa.T @ qb)
    s = np.linalg.svd(resid, compute_uv=False)
    return float(np.arcsin(min(1.0, float(s.max()))))


# --- trajectory CSV (t, g_1..g_n, theta_1..theta_n, phase) ---

def trajectory_csv_lines(traj: GeodesicTrajectory):
    n = traj.spec.n
    header = (["t"] + [f"g_{j + 1}" for j in range(n)]
              + [f"theta_{j + 1}" for j in range(n)] + ["phase"])
    yield ",".join(header)
    phases = traj.phases
    for i, t in enumerate(traj.times):
        row = [f"{t:.17g}"]
        row += [f"{v:.17g}" for v in traj.g[i]]
        row += [f"{v:.17g}" for v in traj.theta[i]]
        row.append(f"{phases[i]:.17g}")
        yield ",".join(row)


def write_trajectory_csv(traj: GeodesicTrajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in trajectory_csv_lines(traj):
            fh.write(line + "\n")


def read_trajectory_csv(path):
    """Returns (times, g, theta, phase) arrays from a trajectory CSV."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    n = (len(header) - 2) // 2
    return data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n], data[:, -1]
