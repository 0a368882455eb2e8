"""Part-level transition matrices and their per-instance combination.

A stack of r row-stochastic c x c matrices is fitted so that, at the
anchor points of each class, the convex combination weighted by the
instance's part coefficients reproduces the observed noisy posterior
row. The per-instance transition matrix is then the same combination
evaluated at any instance, optionally revised by an additive slack
matrix that is clipped and renormalized back to row-stochastic form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .simplexopt import ProjGradConfig, project_simplex, project_simplex_rows

__all__ = [
    "TransitionStack",
    "RevisedTransition",
    "fit_part_matrices",
    "combine",
    "combine_batch",
    "revise",
    "revise_batch",
    "approximation_error",
    "class_dependent_baseline",
    "save_stack",
    "load_stack",
]

_ROW_TOL = 1e-6

# rows this close to unit sum after clipping pass through revision
# unchanged; this is what makes zero-slack revision an exact identity
_FEAS_TOL = 1e-12


@dataclass
class TransitionStack:
    """Fitted part-level matrices: (r, c, c), each row on the simplex."""

    matrices: np.ndarray
    fit_objective_per_row: np.ndarray
    row_objective_traces: list[np.ndarray]
    converged: bool


@dataclass
class RevisedTransition:
    """A revised per-instance matrix plus the rows that degenerated.

    uniform_rows lists row indices that were entirely nonpositive after
    adding the slack and were replaced with the uniform distribution.
    """

    matrix: np.ndarray
    uniform_rows: tuple[int, ...]


def _check_rows_on_simplex(rows: np.ndarray, what: str) -> None:
    if np.any(rows < -_ROW_TOL) or np.any(
        np.abs(rows.sum(axis=-1) - 1.0) > _ROW_TOL
    ):
        raise ConfigError(f"{what} must be rows on the probability simplex")


def fit_part_matrices(
    anchor_rows: np.ndarray,
    coefficients: np.ndarray,
    config: ProjGradConfig | None = None,
) -> TransitionStack:
    """Fit r part-level matrices from per-class anchor rows.

    For class i with anchors l = 1..k, minimizes
    sum_l || t_{i,l} - sum_j h_{i,l,j} P^j_{i,:} ||^2 over simplex rows
    P^j_{i,:} by cycling blocks j in ascending order. With the exact
    block curvature as step size, each gradient-plus-projection step is
    an exact block minimization, so the objective never increases.

    Arguments:
        anchor_rows: (c, k, c) noisy posterior rows at each class's anchors.
        coefficients: (c, k, r) simplex coefficients of those anchors.
        config: stopping settings; max_iters bounds block cycles per row.
    """
    config = config or ProjGradConfig()
    anchor_rows = np.asarray(anchor_rows, dtype=np.float64)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if anchor_rows.ndim != 3:
        raise ConfigError("anchor_rows must have shape (c, k, c)")
    c, k, c2 = anchor_rows.shape
    if c2 != c:
        raise ConfigError("anchor_rows must have shape (c, k, c)")
    if coefficients.shape[:2] != (c, k) or coefficients.ndim != 3:
        raise ConfigError("coefficients must have shape (c, k, r)")
    r = coefficients.shape[2]
    if k < r:
        raise ConfigError(
            f"need at least r={r} anchor points per class, got k={k}"
        )
    _check_rows_on_simplex(anchor_rows, "anchor rows")
    _check_rows_on_simplex(coefficients, "anchor coefficients")

    matrices = np.full((r, c, c), 1.0 / c)
    objectives = np.zeros(c)
    traces: list[np.ndarray] = []
    converged = True
    for i in range(c):
        targets = anchor_rows[i]  # (k, c)
        weights = coefficients[i]  # (k, r)
        rows = matrices[:, i, :]  # (r, c) view, updated in place
        resid = targets - weights @ rows
        trace = [float(np.einsum("kc,kc->", resid, resid))]
        denom = np.einsum("kj,kj->j", weights, weights)
        row_converged = False
        for _ in range(config.max_iters):
            for j in range(r):
                if denom[j] == 0.0:
                    continue  # no anchor uses part j for this class
                step = weights[:, j] @ resid / denom[j]
                new_row = project_simplex(rows[j] + step)
                resid += np.outer(weights[:, j], rows[j] - new_row)
                rows[j] = new_row
            trace.append(float(np.einsum("kc,kc->", resid, resid)))
            if trace[-2] - trace[-1] < config.tol:
                row_converged = True
                break
        objectives[i] = trace[-1]
        traces.append(np.asarray(trace))
        converged = converged and row_converged

    return TransitionStack(
        matrices=matrices,
        fit_objective_per_row=objectives,
        row_objective_traces=traces,
        converged=converged,
    )


def combine(stack: TransitionStack, h: np.ndarray) -> np.ndarray:
    """Per-instance transition matrix sum_j h_j P^j for coefficients h."""
    h = np.asarray(h, dtype=np.float64)
    r = stack.matrices.shape[0]
    if h.shape != (r,):
        raise ConfigError(f"coefficient vector must have length {r}")
    # same reduction as the batch path so both give identical floats
    return combine_batch(stack, h[:, None])[0]


def combine_batch(stack: TransitionStack, h: np.ndarray) -> np.ndarray:
    """Transition matrices for coefficient columns h (r, m) -> (m, c, c)."""
    h = np.asarray(h, dtype=np.float64)
    r = stack.matrices.shape[0]
    if h.ndim != 2 or h.shape[0] != r:
        raise ConfigError(f"coefficient columns must have length {r}")
    return np.einsum("jm,jab->mab", h, stack.matrices)


def _pin_row_sums(m: np.ndarray) -> None:
    # In-place: nudge the largest entry of each row so the float sum of
    # the row is exactly 1.0. A no-op on rows already summing to 1.
    flat = m.reshape(-1, m.shape[-1])
    for _ in range(8):
        s = flat.sum(axis=1)
        bad = np.nonzero(s != 1.0)[0]
        if bad.size == 0:
            break
        flat[bad, np.argmax(flat[bad], axis=1)] += 1.0 - s[bad]


def _restore_rows(flat: np.ndarray) -> np.ndarray:
    # In-place on (n, c) nonnegative rows: rows already at unit sum
    # (within _FEAS_TOL) pass through untouched, others are renormalized,
    # and entirely-zero rows become uniform. Only touched rows get their
    # float sums pinned, so pass-through rows keep their exact bits.
    # Returns the indices of the rows that went uniform.
    c = flat.shape[1]
    sums = flat.sum(axis=1)
    dead = np.nonzero(sums <= 0.0)[0]
    work = np.nonzero((sums > 0.0) & (np.abs(sums - 1.0) > _FEAS_TOL))[0]
    flat[work] /= sums[work, None]
    flat[dead] = 1.0 / c
    fix = np.concatenate([work, dead])
    if fix.size:
        sub = flat[fix]
        _pin_row_sums(sub)
        flat[fix] = sub
    return dead


def revise(t: np.ndarray, slack: np.ndarray) -> RevisedTransition:
    """Apply an additive slack to a transition matrix and restore validity.

    Computes T + slack, clips negative entries to zero, and renormalizes
    rows whose sum moved off 1; rows already at unit sum pass through
    unchanged. A row left entirely at zero (all entries were
    nonpositive) becomes the uniform row and is reported in the result.
    """
    t = np.asarray(t, dtype=np.float64)
    slack = np.asarray(slack, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ConfigError("transition matrix must be square")
    if slack.shape != t.shape:
        raise ConfigError("slack must have the same shape as the matrix")
    c = t.shape[0]
    m = np.maximum(t + slack, 0.0)
    dead = _restore_rows(m)
    return RevisedTransition(matrix=m, uniform_rows=tuple(int(i) for i in dead))


def revise_batch(t: np.ndarray, slack: np.ndarray) -> np.ndarray:
    """Vectorized revise for a batch of matrices (m, c, c); drops flags."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ConfigError("expected a batch of matrices (m, c, c)")
    m = np.maximum(t + slack, 0.0)
    _restore_rows(m.reshape(-1, t.shape[-1]))
    return m


def approximation_error(estimated_row: np.ndarray, true_row: np.ndarray) -> float:
    """l1 distance between an estimated and a true transition row."""
    estimated_row = np.asarray(estimated_row, dtype=np.float64)
    true_row = np.asarray(true_row, dtype=np.float64)
    if estimated_row.shape != true_row.shape or estimated_row.ndim != 1:
        raise ConfigError("rows must be 1-D and the same length")
    return float(np.abs(estimated_row - true_row).sum())


def class_dependent_baseline(anchor_rows: np.ndarray) -> np.ndarray:
    """Instance-independent baseline: per class, mean anchor row.

    The mean of simplex points is on the simplex; renormalization just
    pins the float sum.
    """
    anchor_rows = np.asarray(anchor_rows, dtype=np.float64)
    if anchor_rows.ndim != 3 or anchor_rows.shape[0] != anchor_rows.shape[2]:
        raise ConfigError("anchor_rows must have shape (c, k, c)")
    if anchor_rows.shape[1] == 0:
        raise DataError("every class needs at least one anchor row")
    m = anchor_rows.mean(axis=1)
    m /= m.sum(axis=1, keepdims=True)
    _pin_row_sums(m)
    return m


def save_stack(stack: TransitionStack, directory: str | Path) -> None:
    """Write P_<j>.csv for each part matrix plus stack_meta.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    r = stack.matrices.shape[0]
    for j in range(r):
        np.savetxt(
            directory / f"P_{j}.csv", stack.matrices[j], fmt="%.17g", delimiter=","
        )
    meta = {
        "r": r,
        "class_count": int(stack.matrices.shape[1]),
        "fit_objective_per_row": [float(v) for v in stack.fit_objective_per_row],
        "converged": stack.converged,
    }
    (directory / "stack_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_stack(directory: str | Path) -> TransitionStack:
    """Load a stack written by save_stack."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / "stack_meta.json").read_text())
        r = int(meta["r"])
        matrices = np.stack(
            [
                np.loadtxt(directory / f"P_{j}.csv", delimiter=",", ndmin=2)
                for j in range(r)
            ]
        )
    except OSError as exc:
        raise DataError(f"cannot read transition stack from {directory}: {exc}") from exc
    return TransitionStack(
        matrices=matrices,
        fit_objective_per_row=np.asarray(meta.get("fit_objective_per_row", [])),
        row_objective_traces=[],
        converged=bool(meta.get("converged", False)),
    )
