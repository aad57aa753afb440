"""Cylinders swept by level sets of the flow Hamiltonian, and their checks.

For a flow with coefficients a_j < 0, the level set {sum a_j x_j^2 = c},
c < 0, is the ellipsoid with semi-axes sqrt(c / a_j).  Carrying it along the
flow gives the immersion

    Phi(p, t) = sum_j kappa_j(p) sqrt(g_j(t)) e^{i th_j(t)} u_j,
    kappa_j(p) = sqrt(c / a_j) p_j,   p in S^{n-1},

whose slices t = 0, 1 sit inside the start and target planes.  All tangent
data is analytic: sphere tangents push the chart differential through the
frame, the time tangent uses d/dt (sqrt(g) e^{i th}) evaluated from the flow
equations at the sample, so verification measures geometry rather than
differencing noise.

Verification quantities per mesh: sup |omega| over tangent pairs, sup |Re
Omega| and inf Im Omega over oriented tangent n-frames (the calibration
residuals), the minimum angle to the radial direction, boundary containment
defects, and for surfaces the discrete Laplace-Beltrami residual of the time
coordinate (which the continuum immersion makes harmonic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import (
    DegenerateFrame,
    DegenerateMetric,
    InconsistentBoundary,
    OriginNode,
    SignError,
)
from .geoflow import GeodesicTrajectory

BOUNDARY_TOL = 1e-8
FLUX_SPREAD_TOL = 1e-4
TIME_CHUNK = 64  # node sweeps run in time blocks to bound peak memory


@dataclass(frozen=True, eq=False)
class LevelSetChart:
    """Ellipsoid level set {sum a_j x_j^2 = c} with its semi-axes."""

    coefficients: np.ndarray
    level: float
    semi_axes: np.ndarray


def level_set_chart(coefficients, level: float) -> LevelSetChart:
    a = np.asarray(coefficients, dtype=float)
    if np.any(a >= 0.0):
        raise SignError("all coefficients must be negative")
    if level >= 0.0:
        raise SignError("level must be negative")
    return LevelSetChart(coefficients=a, level=float(level),
                         semi_axes=np.sqrt(level / a))


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Discrete unit sphere with an orthonormal tangent pair per node."""

    kind: str            # "circle" | "latlong" | "quasirandom"
    params: np.ndarray   # (P, k) chart coordinates stored in mesh CSVs
    points: np.ndarray   # (P, n) unit vectors
    tangents: np.ndarray  # (P, n-1, n) orthonormal tangent directions


def sphere_grid(n: int, resolution=None, seed: int = 0) -> SphereGrid:
    """Build the sampling grid used for cylinders in dimension n >= 2.

    n == 2 uses ``resolution`` uniform angles (default 128); n == 3 a
    latitude-longitude grid resolution x resolution/2 with latitudes offset
    from the poles (default 64 x 32); n >= 4 falls back to ``resolution``
    quasi-random unit vectors (default 4096) with Householder-completed
    tangent bases.
    """
    if n < 2:
        raise ValueError("cylinders need n >= 2 (S^0 cross sections are not supported)")
    if n == 2:
        m = 128 if resolution is None else int(resolution)
        s = 2.0 * np.pi * np.arange(m) / m
        points = np.stack([np.cos(s), np.sin(s)], axis=1)
        tangents = np.stack([-np.sin(s), np.cos(s)], axis=1)[:, np.newaxis, :]
        return SphereGrid("circle", s[:, np.newaxis], points, tangents)
    if n == 3:
        m = 64 if resolution is None else int(resolution)
        lon = 2.0 * np.pi * np.arange(m) / m
        lat = np.pi * (np.arange(m // 2) + 0.5) / (m // 2)  # offset avoids poles
        ll, tt = np.meshgrid(lon, lat, indexing="ij")
        ll, tt = ll.ravel(), tt.ravel()
        st, ct = np.sin(tt), np.cos(tt)
        points = np.stack([st * np.cos(ll), st * np.sin(ll), ct], axis=1)
        d_lat = np.stack([ct * np.cos(ll), ct * np.sin(ll), -st], axis=1)
        d_lon = np.stack([-np.sin(ll), np.cos(ll), np.zeros_like(ll)], axis=1)
        tangents = np.stack([d_lat, d_lon], axis=1)
        return SphereGrid("latlong", np.stack([ll, tt], axis=1), points, tangents)
    m = 4096 if resolution is None else int(resolution)
    sampler = qmc.Halton(d=n, seed=seed)
    gauss = ndtri(np.clip(sampler.random(m), 1e-12, 1.0 - 1e-12))
    points = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    # reflection sending p to -sign(p_0) e_0; its remaining columns span p-perp
    sign = np.where(points[:, 0] >= 0.0, 1.0, -1.0)
    v = points.copy()
    v[:, 0] += sign
    vnorm2 = np.einsum("pi,pi->p", v, v)
    tangents = np.empty((m, n - 1, n))
    for k in range(1, n):
        col = -2.0 * v * (v[:, k] / vnorm2)[:, np.newaxis]
        col[:, k] += 1.0
        tangents[:, k - 1, :] = col
    # det [p, tangents...] equals sign; flip one tangent so every node frame
    # is positively oriented and the calibration form keeps a single sign
    tangents[:, 0, :] *= sign[:, np.newaxis]
    return SphereGrid("quasirandom", points, points, tangents)


@dataclass(frozen=True, eq=False)
class CylinderMesh:
    """Discretized immersion S^{n-1} x [0, 1] -> C^n with analytic tangents."""

    trajectory: GeodesicTrajectory
    chart: LevelSetChart
    sphere: SphereGrid
    points: np.ndarray           # (T, P, n) complex
    sphere_tangents: np.ndarray  # (T, P, n-1, n) complex
    time_tangents: np.ndarray    # (T, P, n) complex
    boundary_defect: float

    @property
    def n(self) -> int:
        return self.points.shape[2]


@dataclass(frozen=True)
class SlagReport:
    max_omega: float
    max_re_omega: float
    min_im_omega: float
    orientation: int


@dataclass(frozen=True, eq=False)
class FluxReport:
    levels: np.ndarray           # c grid, ascending
    boundary_values: np.ndarray  # A_c per level
    spreads: np.ndarray          # per-level spread of the primitive over p
    relflux: float


def _frame_weights(traj: GeodesicTrajectory):
    """(w, dw) with w = sqrt(g) e^{i th} and dw its flow-equation derivative."""
    a = traj.spec.coefficients
    g, theta, phases = traj.g, traj.theta, traj.phases
    sqrt_g = np.sqrt(g)
    w = sqrt_g * np.exp(1j * theta)
    dg = -4.0 * np.tan(phases)[:, np.newaxis] * a[np.newaxis, :]
    dtheta = -2.0 * a[np.newaxis, :] / g
    dw = (dg / (2.0 * sqrt_g) + 1j * sqrt_g * dtheta) * np.exp(1j * theta)
    return w, dw


def cylinder_mesh(traj: GeodesicTrajectory, level: float,
                  sphere_resolution=None, seed: int = 0) -> CylinderMesh:
    """Mesh the level-set cylinder of a trajectory with negative coefficients.

    The time grid is the trajectory grid; boundary containment in the two
    endpoint planes is verified at build time.
    """
    chart = level_set_chart(traj.spec.coefficients, level)
    n = traj.spec.n
    grid = sphere_grid(n, sphere_resolution, seed)
    directions = traj.spec.frame_directions()
    w, dw = _frame_weights(traj)

    kappa = grid.points * chart.semi_axes[np.newaxis, :]             # (P, n)
    kappa_tan = grid.tangents * chart.semi_axes[np.newaxis, np.newaxis, :]
    points = np.einsum("pj,tj,ij->tpi", kappa, w, directions)
    sphere_tangents = np.einsum("pmj,tj,ij->tpmi", kappa_tan, w, directions)
    time_tangents = np.einsum("pj,tj,ij->tpi", kappa, dw, directions)

    defect = 0.0
    for idx in (0, -1):
        plane = directions * np.exp(1j * traj.theta[idx])[np.newaxis, :]
        defect = max(defect, float(np.max(np.abs((points[idx] @ plane.conj()).imag))))
    if defect > BOUNDARY_TOL:
        raise AssertionError(f"boundary slice left its plane (defect {defect:.3e})")
    return CylinderMesh(trajectory=traj, chart=chart, sphere=grid, points=points,
                        sphere_tangents=sphere_tangents, time_tangents=time_tangents,
                        boundary_defect=defect)


def boundary_containment(mesh: CylinderMesh, frame, end: int) -> float:
    """sup |Im(F^H Phi)| over the t = end slice against a given plane frame."""
    slice_points = mesh.points[0 if end == 0 else -1]
    return float(np.max(np.abs((slice_points @ frame.columns.conj()).imag)))


def _tangent_stack(mesh: CylinderMesh, sl: slice) -> np.ndarray:
    """(T_chunk, P, n, n) stack: sphere tangents then the time tangent."""
    return np.concatenate(
        [mesh.sphere_tangents[sl], mesh.time_tangents[sl][:, :, np.newaxis, :]], axis=2
    )


def verify_slag(mesh: CylinderMesh) -> SlagReport:
    """Calibration residuals over every node; no thresholding here.

    omega is evaluated on all tangent pairs, Omega as the determinant of the
    (sphere..., time)-ordered tangent frame; the orientation sign is chosen
    so that Im Omega is predominantly positive and reported alongside.
    """
    t_total = mesh.points.shape[0]
    max_omega = 0.0
    max_re = 0.0
    im_values_min = math.inf
    im_values_max = -math.inf
    min_rank_ratio = math.inf
    for start in range(0, t_total, TIME_CHUNK):
        sl = slice(start, min(start + TIME_CHUNK, t_total))
        v = _tangent_stack(mesh, sl)
        pair = np.einsum("tpai,tpbi->tpab", v.conj(), v).imag
        max_omega = max(max_omega, float(np.max(np.abs(pair))))
        det = np.linalg.det(v)
        max_re = max(max_re, float(np.max(np.abs(det.real))))
        im_values_min = min(im_values_min, float(det.imag.min()))
        im_values_max = max(im_values_max, float(det.imag.max()))
        # |Omega| against the Hadamard bound: scale-free rank test
        hadamard = np.sqrt(np.einsum("tpki,tpki->tpk", v.conj(), v).real).prod(axis=2)
        min_rank_ratio = min(min_rank_ratio, float(np.min(np.abs(det) / hadamard)))
    if min_rank_ratio < 1e-12:
        raise DegenerateFrame(
            f"tangent frame degenerates (|Omega| / Hadamard bound = {min_rank_ratio:.3e})"
        )
    orientation = 1 if im_values_max + im_values_min > 0.0 else -1
    min_im = im_values_min if orientation == 1 else -im_values_max
    return SlagReport(max_omega=max_omega, max_re_omega=max_re,
                      min_im_omega=min_im, orientation=orientation)


def euler_transversality(mesh: CylinderMesh) -> float:
    """Minimum angle between the radial direction and the tangent plane."""
    t_total = mesh.points.shape[0]
    min_angle = math.inf
    for start in range(0, t_total, TIME_CHUNK):
        sl = slice(start, min(start + TIME_CHUNK, t_total))
        v = _tangent_stack(mesh, sl)
        real_frames = np.concatenate([v.real, v.imag], axis=3)  # (.., n, 2n)
        q, _ = np.linalg.qr(np.swapaxes(real_frames, 2, 3))     # (.., 2n, n)
        pos = mesh.points[sl]
        e = np.concatenate([pos.real, pos.imag], axis=2)        # (.., 2n)
        norms = np.linalg.norm(e, axis=2)
        if norms.min() < 1e-12:
            raise OriginNode("mesh node at the origin")
        coeff = np.einsum("tpkj,tpk->tpj", q, e)
        resid = e - np.einsum("tpkj,tpj->tpk", q, coeff)
        sin_angle = np.linalg.norm(resid, axis=2) / norms
        min_angle = min(min_angle, float(np.arcsin(np.clip(sin_angle, 0.0, 1.0)).min()))
    return min_angle


def webbing_family(traj: GeodesicTrajectory, levels, sphere_resolution=None,
                   seed: int = 0):
    """Cylinder meshes at the requested negative levels, outermost first.

    Degree-2 homogeneity of the Hamiltonian makes the mesh at level c equal
    the mesh at level c / s^2 rescaled by s, node for node.
    """
    levels = sorted(float(c) for c in levels)  # ascending = |c| decreasing
    return [cylinder_mesh(traj, c, sphere_resolution, seed) for c in levels]


def relflux(traj: GeodesicTrajectory, b0: float, b1: float,
            level_count: int = 9, sphere_resolution=None, seed: int = 0) -> FluxReport:
    """Integrated boundary value of the level-family deformation primitive.

    For each level c, the deformation field v = d Phi_c / dc (central
    difference, dc = 1e-4 |c|) is paired with the time tangent through
    omega; the t-integral from the bottom boundary gives a primitive that
    must be constant on the top boundary, whose value is A_c.  The result
    is -integral A_c dc over [b0, b1].
    """
    if not (b0 <= b1 < 0.0):
        raise SignError("need b0 <= b1 < 0")
    if b0 == b1:
        return FluxReport(levels=np.array([]), boundary_values=np.array([]),
                          spreads=np.array([]), relflux=0.0)
    n = traj.spec.n
    grid = sphere_grid(n, sphere_resolution, seed)
    directions = traj.spec.frame_directions()
    w, dw = _frame_weights(traj)
    times = traj.times

    def node_arrays(c):
        semi = np.sqrt(c / traj.spec.coefficients)
        kappa = grid.points * semi[np.newaxis, :]
        return np.einsum("pj,tj,ij->tpi", kappa, w, directions)

    levels = np.linspace(b0, b1, level_count)
    boundary_values = np.empty(level_count)
    spreads = np.empty(level_count)
    for k, c in enumerate(levels):
        dc = 1e-4 * abs(c)
        v = (node_arrays(c + dc) - node_arrays(c - dc)) / (2.0 * dc)
        semi = np.sqrt(c / traj.spec.coefficients)
        kappa = grid.points * semi[np.newaxis, :]
        d_t = np.einsum("pj,tj,ij->tpi", kappa, dw, directions)
        integrand = np.einsum("tpi,tpi->tp", v.conj(), d_t).imag
        u_top = np.trapezoid(integrand, times, axis=0)
        spread = float(u_top.max() - u_top.min())
        if spread > FLUX_SPREAD_TOL:
            raise InconsistentBoundary(
                f"primitive varies by {spread:.3e} on the top boundary", spread
            )
        boundary_values[k] = float(u_top.mean())
        spreads[k] = spread
    total = -float(np.trapezoid(boundary_values, levels))
    return FluxReport(levels=levels, boundary_values=boundary_values,
                      spreads=spreads, relflux=total)


def harmonic_residual(mesh: CylinderMesh, u_values=None) -> float:
    """Interior sup-norm of the discrete Laplace-Beltrami of u (default u = t).

    Surface case only (n == 2, uniform angle grid).  The operator is the
    divergence-form one for the induced metric (E, F, G from the analytic
    tangents), discretized with central differences: periodic in the angle,
    one-sided second-order at the time edges, residual taken on interior
    time rows.
    """
    if mesh.n != 2 or mesh.sphere.kind != "circle":
        raise ValueError("harmonic residual needs the n = 2 angle x time grid")
    phi_s = mesh.sphere_tangents[:, :, 0, :]
    phi_t = mesh.time_tangents
    e = np.einsum("tpi,tpi->tp", phi_s.conj(), phi_s).real
    f = np.einsum("tpi,tpi->tp", phi_s.conj(), phi_t).real
    g = np.einsum("tpi,tpi->tp", phi_t.conj(), phi_t).real
    det = e * g - f * f
    if det.min() < 1e-14:
        raise DegenerateMetric(f"induced metric degenerates (EG - F^2 = {det.min():.3e})")
    root = np.sqrt(det)

    times = mesh.trajectory.times
    t_count, p_count = e.shape
    if u_values is None:
        u = np.broadcast_to(times[:, np.newaxis], (t_count, p_count))
    else:
        u = np.asarray(u_values, dtype=float)
        if u.shape != e.shape:
            raise ValueError(f"u grid must have shape {e.shape}")
    hs = 2.0 * np.pi / p_count
    ht = times[1] - times[0]

    def d_angle(z):
        return (np.roll(z, -1, axis=1) - np.roll(z, 1, axis=1)) / (2.0 * hs)

    u_s = d_angle(u)
    u_t = np.gradient(u, ht, axis=0)
    flux_s = (g * u_s - f * u_t) / root
    flux_t = (e * u_t - f * u_s) / root
    div = d_angle(flux_s) + np.gradient(flux_t, ht, axis=0)
    residual = div / root
    return float(np.max(np.abs(residual[1:-1, :])))


# --- mesh CSV (sphere_param_coords..., t, re/im of each coordinate) ---

def mesh_csv_lines(mesh: CylinderMesh):
    n = mesh.n
    k = mesh.sphere.params.shape[1]
    header = [f"s_{i + 1}" for i in range(k)] + ["t"]
    for j in range(n):
        header += [f"re_z{j + 1}", f"im_z{j + 1}"]
    yield ",".join(header)
    times = mesh.trajectory.times
    for it, t in enumerate(times):
        for ip in range(mesh.points.shape[1]):
            row = [f"{v:.17g}" for v in mesh.sphere.params[ip]]
            row.append(f"{t:.17g}")
            for j in range(n):
                z = mesh.points[it, ip, j]
                row.append(f"{z.real:.17g}")
                row.append(f"{z.imag:.17g}")
            yield ",".join(row)


def write_mesh_csv(mesh: CylinderMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in mesh_csv_lines(mesh):
            fh.write(line + "\n")


def read_mesh_csv(path):
    """Returns (params, times, points) with points shaped (T, P, n)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    k = sum(1 for name in header if name.startswith("s_"))
    n = (len(header) - k - 1) // 2
    times = np.unique(data[:, k])
    p_count = data.shape[0] // times.size
    params = data[:p_count, :k]
    z = data[:, k + 1::2] + 1j * data[:, k + 2::2]
    return params, times, z.reshape(times.size, p_count, n)
