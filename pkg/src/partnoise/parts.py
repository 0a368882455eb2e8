"""Parts-based factorization of instance features.

Approximates a feature matrix X (d x n) as W H where W holds r part
directions (mixed sign) and every column of H is a point on the
probability simplex, so each instance is a convex combination of
parts. Fitting alternates an exact least-squares update of W with a
projected-gradient update of H.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .simplexopt import (
    ProjGradConfig,
    project_simplex_rows,
    solve_simplex_ls_batch,
)

__all__ = [
    "PartsModel",
    "fit_parts",
    "infer_coefficients",
    "infer_coefficients_batch",
    "reconstruction_error",
    "save_parts",
    "load_parts",
]


@dataclass
class PartsModel:
    """Fitted parts factorization.

    W is (d, r), H is (r, n) with columns on the simplex;
    final_objective is sum_i ||x_i - W h_i||^2 at the stored factors.
    """

    w: np.ndarray
    h: np.ndarray
    r: int
    final_objective: float
    objective_trace: np.ndarray
    converged: bool
    rank_warning: bool
    config: ProjGradConfig = field(default_factory=ProjGradConfig)


def _objective(x: np.ndarray, w: np.ndarray, h: np.ndarray) -> float:
    resid = x - w @ h
    return float(np.einsum("ij,ij->", resid, resid))


def _init_parts(x: np.ndarray, r: int, rng: np.random.Generator) -> np.ndarray:
    # Random unit vectors inside the span of the top-r left singular
    # directions, found by a randomized power iteration on X.
    d, n = x.shape
    y = x @ rng.standard_normal((n, r))
    for _ in range(2):
        y, _ = np.linalg.qr(y)
        y = x @ (x.T @ y)
    if not np.any(y):
        y = rng.standard_normal((d, r))
    q, _ = np.linalg.qr(y)
    w = q @ rng.standard_normal((r, r))
    norms = np.linalg.norm(w, axis=0)
    norms[norms == 0.0] = 1.0
    return w / norms


def fit_parts(
    x: np.ndarray,
    r: int,
    config: ProjGradConfig | None = None,
    alternations: int = 200,
    restarts: int = 3,
    inner_iters: int = 25,
) -> PartsModel:
    """Fit the factorization min ||X - W H||_F^2 with simplex columns in H.

    Arguments:
        x: (d, n) feature matrix, one instance per column.
        r: number of parts, 1 <= r <= min(d, n).
        config: projected-gradient settings for the H updates; its tol
            also stops the outer alternation, and its seed drives the
            random initialization of W.
        alternations: maximum number of (H, W) update rounds.
        restarts: independent random initializations; the model with
            the lowest objective is kept. The problem is nonconvex, so
            the trace and seed are stored for audit.
        inner_iters: projected-gradient steps per H update. Warm starts
            make partial updates cheap, and descent holds for any step
            count; a final full-budget H polish runs after the loop.
    """
    config = config or ProjGradConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("fit_parts expects a 2-D feature matrix (d, n)")
    if not np.all(np.isfinite(x)):
        raise DataError("fit_parts requires finite features")
    d, n = x.shape
    if not 1 <= r <= min(d, n):
        raise ConfigError(f"r must lie in [1, min(d, n)] = [1, {min(d, n)}], got {r}")
    if alternations < 1:
        raise ConfigError("alternations must be at least 1")
    if restarts < 1:
        raise ConfigError("restarts must be at least 1")
    if inner_iters < 1:
        raise ConfigError("inner_iters must be at least 1")

    seeds = np.random.SeedSequence(config.seed).spawn(restarts)
    best: PartsModel | None = None
    for seq in seeds:
        model = _fit_once(
            x, r, config, alternations, inner_iters, np.random.default_rng(seq)
        )
        if best is None or model.final_objective < best.final_objective:
            best = model
    return best


def _fit_once(
    x: np.ndarray,
    r: int,
    config: ProjGradConfig,
    alternations: int,
    inner_iters: int,
    rng: np.random.Generator,
) -> PartsModel:
    d, n = x.shape
    inner = ProjGradConfig(
        step_size=config.step_size,
        max_iters=min(config.max_iters, inner_iters),
        tol=config.tol,
        seed=config.seed,
    )
    w = _init_parts(x, r, rng)
    h = np.full((r, n), 1.0 / r)
    trace = [_objective(x, w, h)]
    rank_warning = False
    converged = False

    for _ in range(alternations):
        # H-step: convex per column; warm-started projected gradient
        # never increases any column objective.
        h, _, _ = solve_simplex_ls_batch(w, x, inner, x0=h)
        # W-step: exact minimum-norm least squares, safe under
        # rank-deficient H and therefore monotone as well.
        coeffs, _, rank, _ = np.linalg.lstsq(h.T, x.T, rcond=None)
        if rank < r:
            rank_warning = True
        w = coeffs.T
        trace.append(_objective(x, w, h))
        if trace[-2] - trace[-1] < config.tol:
            converged = True
            break

    # Leave H at solver quality for the final W.
    h, _, _ = solve_simplex_ls_batch(w, x, config, x0=h)
    trace.append(_objective(x, w, h))

    return PartsModel(
        w=w,
        h=h,
        r=r,
        final_objective=trace[-1],
        objective_trace=np.asarray(trace),
        converged=converged,
        rank_warning=rank_warning,
        config=config,
    )


def _inference_start(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Unconstrained least squares projected onto the simplex, kept only
    # where it beats the uniform start. When the parts matrix is badly
    # conditioned the projected-gradient polish creeps, so starting
    # near the unconstrained optimum matters far more than usual.
    r = w.shape[1]
    sol, _, _, _ = np.linalg.lstsq(w, x, rcond=None)
    cand = project_simplex_rows(sol.T).T
    uniform = np.full_like(cand, 1.0 / r)
    resid_c = x - w @ cand
    resid_u = x - w @ uniform
    better = np.einsum("dm,dm->m", resid_c, resid_c) <= np.einsum(
        "dm,dm->m", resid_u, resid_u
    )
    return np.where(better, cand, uniform)


def infer_coefficients(
    model: PartsModel, x: np.ndarray, config: ProjGradConfig | None = None
) -> np.ndarray:
    """Simplex coefficients of one feature vector under fitted parts."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.w.shape[0],):
        raise DataError(f"feature vector must have length {model.w.shape[0]}")
    return infer_coefficients_batch(model, x[:, None], config)[:, 0]


def infer_coefficients_batch(
    model: PartsModel, x: np.ndarray, config: ProjGradConfig | None = None
) -> np.ndarray:
    """Simplex coefficients for feature columns X (d, m) -> (r, m)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != model.w.shape[0]:
        raise DataError(f"feature columns must have length {model.w.shape[0]}")
    cfg = config or model.config
    u, _, _ = solve_simplex_ls_batch(model.w, x, cfg, x0=_inference_start(model.w, x))
    return u


def reconstruction_error(model: PartsModel, x: np.ndarray) -> float:
    """Total squared reconstruction error of feature columns X (d, m)."""
    u = infer_coefficients_batch(model, x)
    return _objective(np.asarray(x, dtype=np.float64), model.w, u)


def save_parts(model: PartsModel, directory: str | Path) -> None:
    """Write W.csv, H.csv, and parts_meta.json into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "W.csv", model.w, fmt="%.17g", delimiter=",")
    np.savetxt(directory / "H.csv", model.h, fmt="%.17g", delimiter=",")
    meta = {
        "r": model.r,
        "final_objective": model.final_objective,
        "objective_trace": [float(v) for v in model.objective_trace],
        "converged": model.converged,
        "rank_warning": model.rank_warning,
        "config": {
            "step_size": model.config.step_size,
            "max_iters": model.config.max_iters,
            "tol": model.config.tol,
            "seed": model.config.seed,
        },
    }
    (directory / "parts_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_parts(directory: str | Path) -> PartsModel:
    """Load a factorization written by save_parts."""
    directory = Path(directory)
    try:
        w = np.loadtxt(directory / "W.csv", delimiter=",", ndmin=2)
        h = np.loadtxt(directory / "H.csv", delimiter=",", ndmin=2)
        meta = json.loads((directory / "parts_meta.json").read_text())
    except OSError as exc:
        raise DataError(f"cannot read parts model from {directory}: {exc}") from exc
    cfg = meta.get("config", {})
    return PartsModel(
        w=w,
        h=h,
        r=int(meta["r"]),
        final_objective=float(meta["final_objective"]),
        objective_trace=np.asarray(meta.get("objective_trace", [])),
        converged=bool(meta.get("converged", False)),
        rank_warning=bool(meta.get("rank_warning", False)),
        config=ProjGradConfig(
            step_size=cfg.get("step_size"),
            max_iters=int(cfg.get("max_iters", 2000)),
            tol=float(cfg.get("tol", 1e-8)),
            seed=int(cfg.get("seed", 0)),
        ),
    )
