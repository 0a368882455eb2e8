"""Synthetic instance-dependent label noise.

Each instance gets its own flip rate drawn from a truncated normal,
and its own transition row built by projecting the features through a
per-class random matrix: the clean class keeps probability 1 - q and
the remainder is spread over the other classes by a softmax of the
projected scores. The full per-instance transition matrix (all rows,
not just the realized one) is recoverable from the same seed, which
gives downstream code an exact ground-truth oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .errors import ConfigError, DataError

__all__ = [
    "NoiseGenConfig",
    "NoiseProjection",
    "FlipRecord",
    "sample_flip_rates",
    "sample_projections",
    "flip_label",
    "corrupt_dataset",
    "true_transitions",
    "noise_model",
]

_FLIP_RATE_STD = 0.1

# Stream labels for splitting one seed into independent substreams; the
# per-instance label draw adds the instance index so the result does
# not depend on processing order.
_STREAM_FLIP_RATES = 0
_STREAM_PROJECTIONS = 1
_STREAM_LABEL_DRAW = 2


@dataclass(frozen=True)
class NoiseGenConfig:
    """Target average flip rate tau in [0, 1] and the generation seed."""

    tau: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class NoiseProjection:
    """Per-class feature projections, shape (c, d, c)."""

    per_class: np.ndarray

    @property
    def class_count(self) -> int:
        return self.per_class.shape[0]


@dataclass(frozen=True)
class FlipRecord:
    """One corrupted label: its flip rate, full transition row, and draw."""

    flip_rate: float
    row_p: np.ndarray
    noisy_label: int


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def sample_flip_rates(n: int, tau: float, seed: int) -> np.ndarray:
    """Draw n flip rates from a normal truncated to [0, 1].

    Rejection sampling from N(tau, 0.1^2) defines the distribution:
    out-of-range draws are redrawn, not clipped.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    rng = _stream(seed, _STREAM_FLIP_RATES)
    rates = rng.normal(tau, _FLIP_RATE_STD, size=n)
    while True:
        bad = (rates < 0.0) | (rates > 1.0)
        count = int(bad.sum())
        if count == 0:
            return rates
        rates[bad] = rng.normal(tau, _FLIP_RATE_STD, size=count)


def sample_projections(class_count: int, dim: int, seed: int) -> NoiseProjection:
    """Draw one d x c standard-normal projection per class."""
    if class_count < 2:
        raise ConfigError("class_count must be at least 2")
    if dim < 1:
        raise ConfigError("dim must be at least 1")
    rng = _stream(seed, _STREAM_PROJECTIONS)
    return NoiseProjection(rng.standard_normal((class_count, dim, class_count)))


def _transition_row(
    x: np.ndarray, label: int, q: float, projection: NoiseProjection
) -> np.ndarray:
    c = projection.class_count
    scores = x @ projection.per_class[label]
    others = np.delete(np.arange(c), label)
    # softmax over the non-clean classes only; the clean class is
    # excluded from the normalization rather than pushed to -inf
    z = scores[others] - scores[others].max()
    e = np.exp(z)
    row = np.zeros(c)
    row[others] = q * (e / e.sum())
    row[label] = 1.0 - q
    return row


def flip_label(
    x: np.ndarray,
    label: int,
    q: float,
    projection: NoiseProjection,
    rng: np.random.Generator,
) -> FlipRecord:
    """Corrupt one label.

    Builds the transition row for (x, label): probability 1 - q of
    keeping the label, the remaining q spread over the other classes by
    a softmax of the projected feature scores, then draws the noisy
    label categorically using rng.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("flip_label requires finite features")
    c = projection.class_count
    if not 0 <= label < c:
        raise DataError(f"label {label} outside [0, {c})")
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"flip rate must lie in [0, 1], got {q}")
    if x.shape != (projection.per_class.shape[1],):
        raise DataError("feature vector does not match the projection dim")
    row = _transition_row(x, label, q, projection)
    noisy = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    return FlipRecord(flip_rate=q, row_p=row, noisy_label=min(noisy, c - 1))


def corrupt_dataset(dataset: Dataset, config: NoiseGenConfig) -> Dataset:
    """Corrupt every clean label of a dataset.

    Returns a new dataset carrying the noisy labels and, per instance,
    the transition row that generated them (true_rows). Clean labels
    are kept. Each instance's label draw uses its own counter-derived
    substream, so the result is independent of processing order.
    """
    if dataset.clean_labels is None:
        raise DataError("corrupt_dataset needs clean labels")
    n, d, c = dataset.n, dataset.d, dataset.class_count
    rates = sample_flip_rates(n, config.tau, config.seed)
    projection = sample_projections(c, d, config.seed)
    rows = np.zeros((n, c))
    noisy = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rng = _stream(config.seed, _STREAM_LABEL_DRAW, i)
        record = flip_label(
            dataset.features[i], int(dataset.clean_labels[i]), rates[i], projection, rng
        )
        rows[i] = record.row_p
        noisy[i] = record.noisy_label
    return dataset.replace(noisy_labels=noisy, true_rows=rows)


def true_transitions(
    features: np.ndarray, rates: np.ndarray, projection: NoiseProjection
) -> np.ndarray:
    """Ground-truth full transition matrices, shape (n, c, c).

    Row i of each matrix is the row the generator would use had the
    clean label been i; the row actually used for the realized clean
    label matches the stored true_rows entry exactly.
    """
    features = np.asarray(features, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    n = features.shape[0]
    c = projection.class_count
    out = np.zeros((n, c, c))
    # same elementary routine as flip_label, so the row for the realized
    # clean label matches the stored true_rows entry bit for bit
    for i in range(n):
        for label in range(c):
            out[i, label] = _transition_row(features[i], label, rates[i], projection)
    return out


def noise_model(
    n: int, dim: int, class_count: int, config: NoiseGenConfig
) -> tuple[np.ndarray, NoiseProjection]:
    """Regenerate the (flip rates, projections) pair for a seed.

    corrupt_dataset derives everything it draws from the config seed,
    so the exact noise model of a stored corrupted dataset can be
    rebuilt from its recorded generation metadata.
    """
    return (
        sample_flip_rates(n, config.tau, config.seed),
        sample_projections(class_count, dim, config.seed),
    )
