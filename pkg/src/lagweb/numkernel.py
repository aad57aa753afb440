"""Dense kernel: structured eigendecomposition, fixed-step RK4, damped Newton.

Everything here is pure-function over small dense arrays.  The only
nontrivial algorithm is the two-stage Jacobi scheme for symmetric unitary
matrices: the real and imaginary parts of such a matrix are commuting real
symmetric matrices, so a joint orthogonal eigenbasis exists and can be found
by diagonalizing Re(S) first and then Im(S) restricted to each Re-eigenspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, NoConvergence, NotSymmetricUnitary, SingularJacobian

TWO_PI = 2.0 * np.pi

# Precision ladder used throughout the package: construction-time checks at
# 1e-10, derived identities at 1e-8 (see laggrass), Jacobi sweep target 1e-13.
JACOBI_TOL = 1e-13
SYM_UNITARY_TOL = 1e-10
# Re-eigenvalue gaps below this are merged before the Im stage; eigenvectors
# across smaller gaps are not trustworthy individually, and the Im stage (or
# the final arc-distance blocking) separates whatever is genuinely distinct.
RE_CLUSTER_TOL = 1e-8


@dataclass(frozen=True)
class ComplexMatrix:
    """Dense complex matrix stored as a row-major tuple of entries."""

    n_rows: int
    n_cols: int
    entries: tuple

    def __post_init__(self):
        if self.n_rows <= 0 or self.n_cols <= 0:
            raise ValueError("matrix dimensions must be positive")
        if len(self.entries) != self.n_rows * self.n_cols:
            raise ValueError(
                f"expected {self.n_rows * self.n_cols} entries, got {len(self.entries)}"
            )
        arr = np.asarray(self.entries, dtype=complex)
        if not np.all(np.isfinite(arr.view(float))):
            raise ValueError("matrix entries must be finite")

    @classmethod
    def from_array(cls, a) -> "ComplexMatrix":
        a = np.asarray(a, dtype=complex)
        if a.ndim != 2:
            raise ValueError("expected a 2-d array")
        return cls(a.shape[0], a.shape[1], tuple(a.ravel().tolist()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=complex).reshape(self.n_rows, self.n_cols)


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step classical RK4 configuration."""

    step_count: int = 2000
    method: str = "rk4"

    def __post_init__(self):
        if self.step_count < 1:
            raise ValueError("step_count must be >= 1")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")


@dataclass(frozen=True)
class NewtonConfig:
    max_iterations: int = 40
    residual_tolerance: float = 1e-12
    damping: float = 1.0
    jacobian_fd_step: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.residual_tolerance <= 0.0:
            raise ValueError("residual_tolerance must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.jacobian_fd_step <= 0.0:
            raise ValueError("jacobian_fd_step must be positive")


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 60):
    """Cyclic Jacobi diagonalization of a real symmetric matrix.

    Returns (eigenvalues, V) with a = V @ diag(w) @ V.T; sweeps stop once the
    largest off-diagonal entry drops below ``tol``.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    converged = False
    for _ in range(max_sweeps):
        off = np.max(np.abs(a - np.diag(a.diagonal())))
        if off < tol:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 0.1 * tol:
                    continue
                # Givens angle zeroing a[p, q]; smaller-|t| root keeps |angle| <= pi/4
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(tau, 1.0)) if tau != 0.0 else 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                jt = np.array([[c, -s], [s, c]])  # transpose of the Givens rotation
                a[[p, q], :] = jt @ a[[p, q], :]
                a[:, [p, q]] = a[:, [p, q]] @ jt.T
                v[:, [p, q]] = v[:, [p, q]] @ jt.T
    if not converged and np.max(np.abs(a - np.diag(a.diagonal()))) >= tol:
        raise NoConvergence("Jacobi sweeps did not reach tolerance")
    # clean up rounding asymmetry accumulated by the two-sided updates
    a = 0.5 * (a + a.T)
    return a.diagonal().copy(), v


def _cluster_sorted(values: np.ndarray, gap: float):
    """Split the indices of an ascending 1-d array wherever the gap exceeds ``gap``."""
    groups = [[0]]
    for i in range(1, len(values)):
        if values[i] - values[i - 1] < gap:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def joint_diagonalize_symmetric_unitary(s, cluster_tol: float = 1e-8):
    """Orthogonally diagonalize a symmetric unitary matrix.

    Parameters
    ----------
    s : (n, n) complex array or ComplexMatrix, with s.T == s and s*s = I
        within 1e-10.
    cluster_tol : eigenvalues closer than this in arc distance on the unit
        circle are reported as one block.

    Returns
    -------
    o : (n, n) real orthogonal matrix with o.T @ s @ o diagonal.
    args : (n,) arguments of the diagonal entries, taken in [0, 2*pi).
    blocks : list of index lists partitioning range(n), grouped by arc
        distance; a group may wrap around 0 ~ 2*pi.
    """
    if isinstance(s, ComplexMatrix):
        s = s.as_array()
    s = np.asarray(s, dtype=complex)
    n = s.shape[0]
    if s.shape != (n, n):
        raise NotSymmetricUnitary("matrix is not square")
    sym_defect = float(np.max(np.abs(s - s.T)))
    if sym_defect > SYM_UNITARY_TOL:
        raise NotSymmetricUnitary(
            f"symmetry defect {sym_defect:.3e} exceeds {SYM_UNITARY_TOL:.0e}", sym_defect
        )
    unit_defect = float(np.max(np.abs(s.conj().T @ s - np.eye(n))))
    if unit_defect > SYM_UNITARY_TOL:
        raise NotSymmetricUnitary(
            f"unitarity defect {unit_defect:.3e} exceeds {SYM_UNITARY_TOL:.0e}", unit_defect
        )
    s = 0.5 * (s + s.T)

    # stage 1: diagonalize Re(s); its eigenspaces are Im(s)-invariant
    w_re, o = jacobi_eigh(s.real)
    order = np.argsort(w_re, kind="stable")
    w_re = w_re[order]
    o = o[:, order]

    # stage 2: within each Re-eigenvalue cluster, diagonalize Im(s)
    for group in _cluster_sorted(w_re, RE_CLUSTER_TOL):
        if len(group) < 2:
            continue
        cols = o[:, group]
        b = cols.T @ s.imag @ cols
        _, r = jacobi_eigh(0.5 * (b + b.T))
        o[:, group] = cols @ r

    lam = np.einsum("ij,jk,ki->i", o.T, s, o)
    args = np.mod(np.angle(lam), TWO_PI)
    order = np.argsort(args, kind="stable")
    args = args[order]
    o = o[:, order]

    blocks = _cluster_sorted(args, cluster_tol)
    # arc distance wraps: a group near 2*pi may continue into the group at 0
    if len(blocks) > 1 and (args[blocks[0][0]] + TWO_PI - args[blocks[-1][-1]]) < cluster_tol:
        blocks[0] = blocks.pop() + blocks[0]
    return o, args, blocks


def integrate_rk4(vector_field, y0, t0: float, t1: float, config: IntegratorConfig):
    """Classical fixed-step RK4 over [t0, t1].

    ``vector_field(t, y)`` maps a float and a 1-d state array to the state
    derivative.  Returns (times, states) with ``step_count + 1`` samples
    including both endpoints; states has shape (step_count + 1, len(y0)).

    Raises NonFiniteState as soon as a step produces NaN or Inf.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    y = np.array(y0, dtype=float, copy=True).ravel()
    m = config.step_count
    h = (t1 - t0) / m
    ts = t0 + h * np.arange(m + 1)
    ts[-1] = t1
    ys = np.empty((m + 1, y.size))
    ys[0] = y
    for i in range(m):
        t = ts[i]
        k1 = np.asarray(vector_field(t, y))
        k2 = np.asarray(vector_field(t + 0.5 * h, y + (0.5 * h) * k1))
        k3 = np.asarray(vector_field(t + 0.5 * h, y + (0.5 * h) * k2))
        k4 = np.asarray(vector_field(t + h, y + h * k3))
        y = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"state became non-finite at t = {ts[i + 1]:.6g}")
        ys[i + 1] = y
    return ts, ys


def finite_difference_jacobian(residual, x: np.ndarray, step: float, out_dim=None) -> np.ndarray:
    """Central-difference Jacobian of residual at x.

    ``out_dim`` sizes the result without an extra residual call; defaults to
    len(x).
    """
    x = np.asarray(x, dtype=float)
    jac = np.empty((x.size if out_dim is None else out_dim, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        r_plus = np.atleast_1d(np.asarray(residual(x + e), dtype=float))
        r_minus = np.atleast_1d(np.asarray(residual(x - e), dtype=float))
        jac[:, i] = (r_plus - r_minus) / (2.0 * step)
    return jac


def newton_solve(residual, x0, config: NewtonConfig):
    """Damped Newton iteration with a central-difference Jacobian.

    Returns (root, iterations, final_residual_norm, jacobian_condition) where
    the norm is the sup-norm and the condition estimate comes from the last
    Jacobian assembled.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    cond = np.inf
    jac = None
    for it in range(config.max_iterations + 1):
        r = np.atleast_1d(np.asarray(residual(x), dtype=float))
        norm = float(np.max(np.abs(r)))
        if not np.isfinite(norm):
            raise NonFiniteState("residual is non-finite")
        if norm < config.residual_tolerance:
            if jac is None:
                jac = finite_difference_jacobian(residual, x, config.jacobian_fd_step, r.size)
            cond = float(np.linalg.cond(jac))
            return x, it, norm, cond
        if it == config.max_iterations:
            break
        jac = finite_difference_jacobian(residual, x, config.jacobian_fd_step, r.size)
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"Jacobian solve failed: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SingularJacobian("Jacobian solve produced non-finite step")
        x = x + config.damping * delta
    raise NoConvergence(
        f"no convergence after {config.max_iterations} iterations (residual {norm:.3e})"
    )
