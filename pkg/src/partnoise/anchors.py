"""Anchor point selection and noisy-posterior row estimation.

An anchor point for class i is an instance believed to belong to i
with probability one; at such a point the noisy posterior vector
equals row i of the instance's transition matrix, which is what makes
the rows estimable from a model of the noisy posterior alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "AnchorSet",
    "AnchorRows",
    "select_anchors",
    "estimate_anchor_rows",
    "save_anchors",
    "load_anchors",
]

_ROW_TOL = 1e-6


@dataclass
class AnchorSet:
    """Per-class anchor indices with their selection scores.

    indices is (c, k); scores records the posterior value each pick was
    ranked by, kept for audit. fallback_count[i] says how many of class
    i's picks came from the global ranking because fewer than k
    instances had argmax i.
    """

    indices: np.ndarray
    scores: np.ndarray
    k: int
    fallback_count: tuple[int, ...]


@dataclass
class AnchorRows:
    """Estimated transition rows at the anchors: (c, k, c).

    provenance is "estimated" when the rows come from a fitted
    posterior model and "oracle" when they come from ground truth.
    """

    rows: np.ndarray
    provenance: str = "estimated"


def select_anchors(posterior: np.ndarray, k: int) -> AnchorSet:
    """Pick the k most confident instances of each class.

    For class i, instances whose argmax is i are ranked by posterior
    value (ties broken by lower index). When fewer than k qualify, the
    remainder comes from the global ranking of column i over all
    instances. Increasing k never drops an earlier pick.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    if posterior.ndim != 2:
        raise DataError("posterior must be (n, c)")
    n, c = posterior.shape
    if np.any(posterior < -_ROW_TOL) or np.any(
        np.abs(posterior.sum(axis=1) - 1.0) > _ROW_TOL
    ):
        raise DataError("posterior rows must lie on the probability simplex")
    if k < 1:
        raise ConfigError("k must be at least 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of instances n={n}")

    argmax = np.argmax(posterior, axis=1)
    indices = np.zeros((c, k), dtype=np.int64)
    scores = np.zeros((c, k))
    fallback = []
    idx = np.arange(n)
    for i in range(c):
        own = (argmax == i).astype(np.int64)
        # one fixed total order: own-class picks first, then the global
        # ranking, both by descending score with index as tiebreak
        order = np.lexsort((idx, -posterior[:, i], -own))
        chosen = order[:k]
        indices[i] = chosen
        scores[i] = posterior[chosen, i]
        fallback.append(int(np.sum(own[chosen] == 0)))
    return AnchorSet(indices=indices, scores=scores, k=k, fallback_count=tuple(fallback))


def estimate_anchor_rows(
    anchor_set: AnchorSet, posterior: np.ndarray, provenance: str = "estimated"
) -> AnchorRows:
    """Noisy posterior rows at the anchors, renormalized to sum to 1.

    posterior is (n, c); row l of class i's block is the posterior of
    the l-th anchor of class i, clipped at zero and renormalized. Sums
    land on 1.0 exactly in almost all cases and within one ulp always.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    if posterior.ndim != 2:
        raise DataError("posterior must be (n, c)")
    c, k = anchor_set.indices.shape
    if posterior.shape[1] != c:
        raise DataError(f"posterior has {posterior.shape[1]} classes, anchors have {c}")
    rows = np.maximum(posterior[anchor_set.indices], 0.0)  # (c, k, c)
    sums = rows.sum(axis=2, keepdims=True)
    if np.any(sums <= 0.0):
        raise DataError("an anchor posterior row is entirely zero")
    rows /= sums
    flat = rows.reshape(-1, c)
    for _ in range(8):
        s = flat.sum(axis=1)
        bad = np.nonzero(s != 1.0)[0]
        if bad.size == 0:
            break
        flat[bad, np.argmax(flat[bad], axis=1)] += 1.0 - s[bad]
    return AnchorRows(rows=rows, provenance=provenance)


def save_anchors(
    anchor_set: AnchorSet, anchor_rows: AnchorRows, path: str | Path
) -> None:
    """Write the selection and the estimated rows as one JSON document."""
    payload = {
        "k": anchor_set.k,
        "indices": anchor_set.indices.tolist(),
        "scores": anchor_set.scores.tolist(),
        "fallback_count": list(anchor_set.fallback_count),
        "rows": anchor_rows.rows.tolist(),
        "provenance": anchor_rows.provenance,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_anchors(path: str | Path) -> tuple[AnchorSet, AnchorRows]:
    """Load a document written by save_anchors."""
    try:
        payload = json.loads(Path(path).read_text())
        anchor_set = AnchorSet(
            indices=np.asarray(payload["indices"], dtype=np.int64),
            scores=np.asarray(payload["scores"], dtype=np.float64),
            k=int(payload["k"]),
            fallback_count=tuple(payload["fallback_count"]),
        )
        anchor_rows = AnchorRows(
            rows=np.asarray(payload["rows"], dtype=np.float64),
            provenance=str(payload["provenance"]),
        )
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load anchors from {path}: {exc}") from exc
    return anchor_set, anchor_rows
