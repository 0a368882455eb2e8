"""Simplex-constrained optimization kernel.

Two primitives shared by the parts factorization and the part-matrix
fit: Euclidean projection onto the probability simplex, and least
squares over the simplex solved by projected gradient with a fixed
step derived from a spectral bound.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "ProjGradConfig",
    "SimplexLSResult",
    "project_simplex",
    "project_simplex_rows",
    "solve_simplex_ls",
    "solve_simplex_ls_batch",
]

# feasibility band of the pass-through fast path; anything this close to
# the simplex is its own projection for every downstream tolerance, and
# passing it through unchanged is what makes re-projection exactly
# idempotent even when the unit-sum pin stops one ulp short
_FEAS_TOL = 1e-12


@dataclass(frozen=True)
class ProjGradConfig:
    """Settings for the projected-gradient least-squares solver.

    step_size=None derives the step from a power-iteration estimate of
    the curvature bound; tol is the stopping threshold on the objective
    decrease between iterations.
    """

    step_size: float | None = None
    max_iters: int = 2000
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("step_size must be positive when given")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")


@dataclass
class SimplexLSResult:
    """Outcome of a simplex-constrained least-squares solve."""

    x: np.ndarray
    fun: float
    trace: np.ndarray
    iterations: int
    converged: bool


def _pin_unit_sum(w: np.ndarray) -> np.ndarray:
    # Nudge the largest entry so the float sum is exactly 1.0; keeps
    # the projection idempotent and downstream feasibility checks exact.
    for _ in range(8):
        s = w.sum()
        if s == 1.0:
            break
        w[np.argmax(w)] += 1.0 - s
    return w


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex.

    Sort-and-threshold algorithm: O(m log m), deterministic, and exact
    for inputs already on the simplex.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ConfigError("project_simplex expects a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ConfigError("project_simplex requires finite entries")
    m = v.size
    if m == 1:
        return np.ones(1)
    if np.all(v >= 0.0) and abs(v.sum() - 1.0) <= _FEAS_TOL:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, m + 1)
    # largest support size whose threshold keeps all kept entries positive
    rho = np.nonzero(u - (css - 1.0) / j > 0.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return _pin_unit_sum(np.maximum(v - theta, 0.0))


def project_simplex_rows(v: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection of a 2-D array (vectorized)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] == 0:
        raise ConfigError("project_simplex_rows expects a 2-D array")
    if not np.all(np.isfinite(v)):
        raise ConfigError("project_simplex_rows requires finite entries")
    n, m = v.shape
    if m == 1:
        return np.ones((n, 1))
    # rows already on the simplex pass through bit for bit, matching the
    # single-vector fast path and making the projection exactly idempotent
    feasible = np.all(v >= 0.0, axis=1) & (np.abs(v.sum(axis=1) - 1.0) <= _FEAS_TOL)
    out = v.copy()
    if np.all(feasible):
        return out
    v = v[~feasible]
    u = np.sort(v, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1)
    j = np.arange(1, m + 1)
    mask = u - (css - 1.0) / j > 0.0
    rho = m - 1 - np.argmax(mask[:, ::-1], axis=1)
    theta = (css[np.arange(v.shape[0]), rho] - 1.0) / (rho + 1.0)
    w = np.maximum(v - theta[:, None], 0.0)
    for _ in range(8):
        s = w.sum(axis=1)
        bad = np.nonzero(s != 1.0)[0]
        if bad.size == 0:
            break
        w[bad, np.argmax(w[bad], axis=1)] += 1.0 - s[bad]
    out[~feasible] = w
    return out


def _curvature_bound(a: np.ndarray, power_iters: int = 50) -> float:
    # Lipschitz constant of the gradient of ||A u - b||^2 is
    # 2 * lambda_max(A^T A); estimate lambda_max by power iteration.
    g = a.T @ a
    z = np.ones(g.shape[0]) / np.sqrt(g.shape[0])
    for _ in range(power_iters):
        z_next = g @ z
        norm = np.linalg.norm(z_next)
        if norm == 0.0:
            return 0.0
        z = z_next / norm
    return 2.0 * float(z @ g @ z)


def solve_simplex_ls(
    a: np.ndarray,
    b: np.ndarray,
    config: ProjGradConfig | None = None,
    x0: np.ndarray | None = None,
) -> SimplexLSResult:
    """Minimize ||A u - b||^2 over the probability simplex.

    Projected gradient with a fixed step 1/L, L estimated from 50
    power-iteration steps unless config.step_size overrides it. Stops
    when the objective decrease drops below config.tol; hitting
    config.max_iters first returns the last iterate flagged as
    non-converged.

    Arguments:
        a: (m, k) design matrix.
        b: (m,) target vector.
        config: solver settings, defaults to ProjGradConfig().
        x0: optional warm-start point, projected before use; defaults
            to the uniform vector.
    """
    config = config or ProjGradConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
        raise ConfigError("solve_simplex_ls expects A (m, k) and b (m,)")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigError("solve_simplex_ls requires finite inputs")
    k = a.shape[1]
    if k < 1:
        raise ConfigError("solve_simplex_ls needs at least one column")

    if x0 is None:
        u = project_simplex(np.full(k, 1.0 / k))
    else:
        u = project_simplex(np.asarray(x0, dtype=np.float64))

    if config.step_size is not None:
        step = config.step_size
    else:
        curv = _curvature_bound(a)
        if curv == 0.0:
            # A is zero: every feasible point is optimal.
            fun = float(b @ b)
            return SimplexLSResult(u, fun, np.array([fun]), 0, True)
        step = 1.0 / curv

    resid = a @ u - b
    trace = [float(resid @ resid)]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        grad = 2.0 * (a.T @ resid)
        u = project_simplex(u - step * grad)
        resid = a @ u - b
        trace.append(float(resid @ resid))
        if trace[-2] - trace[-1] < config.tol:
            converged = True
            break
    return SimplexLSResult(u, trace[-1], np.asarray(trace), iterations, converged)


def solve_simplex_ls_batch(
    a: np.ndarray,
    b: np.ndarray,
    config: ProjGradConfig | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Column-wise simplex least squares with a shared design matrix.

    Solves min ||A u_i - b_i||^2 for every column b_i of B at once;
    the per-column problems are independent, so one vectorized
    projected-gradient loop covers them all. Returns (U, objectives,
    converged) where U is (k, n_cols).
    """
    config = config or ProjGradConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ConfigError("solve_simplex_ls_batch expects A (m, k) and B (m, n)")
    k = a.shape[1]
    n = b.shape[1]

    if x0 is None:
        u = np.full((k, n), 1.0 / k)
    else:
        u = np.asarray(x0, dtype=np.float64)
        if u.shape != (k, n):
            raise ConfigError("x0 must have shape (k, n_cols)")
    u = project_simplex_rows(u.T).T

    if config.step_size is not None:
        step = config.step_size
    else:
        curv = _curvature_bound(a)
        if curv == 0.0:
            return u, np.einsum("mn,mn->n", b, b), True
        step = 1.0 / curv

    resid = a @ u - b
    fun = np.einsum("mn,mn->n", resid, resid)
    converged = False
    for _ in range(config.max_iters):
        grad = 2.0 * (a.T @ resid)
        u = project_simplex_rows((u - step * grad).T).T
        resid = a @ u - b
        fun_next = np.einsum("mn,mn->n", resid, resid)
        decrease = np.max(fun - fun_next) if n else 0.0
        fun = fun_next
        if decrease < config.tol:
            converged = True
            break
    return u, fun, converged
