"""Datasets, loaders, splits, and the on-disk bundle format.

A dataset bundle is a directory holding features.csv (or an IDX image
and label pair), clean_labels.csv, optionally noisy_labels.csv and
true_rows.csv, and meta.json with at least n, d, and class_count.
All floats are written with 17 significant digits so a round trip is
exact.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "SplitSpec",
    "load_csv",
    "load_idx",
    "split_indices",
    "split_train_val",
    "normalize_features",
    "save_bundle",
    "load_bundle",
]

_ROW_SUM_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable feature/label container.

    features is (n, d) float64; clean_labels and noisy_labels are (n,)
    int64 when present; true_rows is (n, class_count) and holds, per
    instance, the transition row its noisy label was drawn from.
    """

    features: np.ndarray
    clean_labels: np.ndarray | None = None
    noisy_labels: np.ndarray | None = None
    class_count: int = 0
    true_rows: np.ndarray | None = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise DataError("features must be a nonempty 2-D array (n, d)")
        if not np.all(np.isfinite(features)):
            raise DataError("features must be finite")
        object.__setattr__(self, "features", _frozen(features))
        n = features.shape[0]

        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")

        for name in ("clean_labels", "noisy_labels"):
            labels = getattr(self, name)
            if labels is None:
                continue
            labels = np.asarray(labels)
            if labels.shape != (n,):
                raise DataError(f"{name} must have shape ({n},)")
            if not np.issubdtype(labels.dtype, np.integer):
                raise DataError(f"{name} must be integers")
            labels = labels.astype(np.int64)
            if labels.min() < 0 or labels.max() >= self.class_count:
                raise DataError(f"{name} must lie in [0, {self.class_count})")
            object.__setattr__(self, name, _frozen(labels))

        if self.true_rows is not None:
            rows = np.asarray(self.true_rows, dtype=np.float64)
            if rows.shape != (n, self.class_count):
                raise DataError(f"true_rows must have shape ({n}, {self.class_count})")
            if np.any(rows < 0.0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
                raise DataError("true_rows must be probability rows")
            object.__setattr__(self, "true_rows", _frozen(rows))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def replace(self, **changes) -> "Dataset":
        """New dataset with some fields replaced (re-validated)."""
        return dc_replace(self, **changes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """New dataset restricted to the given instance indices."""
        indices = np.asarray(indices)
        return Dataset(
            features=self.features[indices],
            clean_labels=None if self.clean_labels is None else self.clean_labels[indices],
            noisy_labels=None if self.noisy_labels is None else self.noisy_labels[indices],
            class_count=self.class_count,
            true_rows=None if self.true_rows is None else self.true_rows[indices],
        )


@dataclass(frozen=True)
class SplitSpec:
    """Validation fraction in (0, 1) and the permutation seed."""

    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie strictly between 0 and 1")


def _infer_class_count(labels: np.ndarray, class_count: int | None) -> int:
    if class_count is None:
        return int(labels.max()) + 1
    if class_count < int(labels.max()) + 1:
        raise DataError("class_count smaller than 1 + max label")
    return class_count


def load_csv(
    path: str | Path,
    label_column: int | str,
    has_header: bool = False,
    class_count: int | None = None,
) -> Dataset:
    """Load features and clean labels from a delimited text file.

    label_column selects the label cell by index (negative allowed) or,
    when has_header is set, by column name. Parse failures report the
    offending row and column.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(lines)
    rows = [row for row in reader if row]
    if has_header:
        if not rows:
            raise DataError(f"{path}: empty file")
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        if isinstance(label_column, str):
            try:
                label_idx = header.index(label_column)
            except ValueError:
                raise DataError(f"{path}: no column named {label_column!r}") from None
        else:
            label_idx = label_column
    else:
        if isinstance(label_column, str):
            raise ConfigError("label_column by name requires has_header=True")
        label_idx = label_column
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(rows[0])
    label_pos = label_idx % width if -width <= label_idx < width else None
    if label_pos is None:
        raise DataError(f"{path}: label column {label_column} outside row width {width}")

    features = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for rno, row in enumerate(rows, start=2 if has_header else 1):
        i = rno - (2 if has_header else 1)
        if len(row) != width:
            raise DataError(f"{path}: row {rno} has {len(row)} cells, expected {width}")
        feat_pos = 0
        for cno, cell in enumerate(row):
            cell = cell.strip()
            if cno == label_pos:
                try:
                    label = int(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {rno}, column {cno + 1}: bad label {cell!r}"
                    ) from None
                if label < 0:
                    raise DataError(f"{path}: row {rno}: negative label {label}")
                labels[i] = label
            else:
                try:
                    features[i, feat_pos] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {rno}, column {cno + 1}: bad value {cell!r}"
                    ) from None
                feat_pos += 1
    return Dataset(
        features=features,
        clean_labels=labels,
        class_count=_infer_class_count(labels, class_count),
    )


def _read_idx(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4:
        raise DataError(f"{path}: truncated IDX header")
    zero1, zero2, dtype, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0:
        raise DataError(f"{path}: bad IDX magic bytes")
    if dtype != 0x08:
        raise DataError(f"{path}: unsupported IDX element type 0x{dtype:02x}")
    if len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    expected = int(np.prod(dims)) if dims else 0
    if data.size != expected:
        raise DataError(f"{path}: expected {expected} bytes of data, got {data.size}")
    return data.reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load an IDX image/label pair (big-endian, unsigned byte).

    Pixels are flattened per image and scaled into [0, 1] by dividing
    by 255.
    """
    images = _read_idx(Path(images_path))
    labels = _read_idx(Path(labels_path))
    if images.ndim < 2:
        raise DataError(f"{images_path}: images need at least 2 dimensions")
    if labels.ndim != 1:
        raise DataError(f"{labels_path}: labels must be 1-D")
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    return Dataset(
        features=features,
        clean_labels=labels,
        class_count=_infer_class_count(labels, None),
    )


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Index sets (train, val) of the deterministic unstratified split.

    Exposed so arrays aligned with a dataset (per-instance transition
    stacks, say) can be partitioned the same way as the dataset itself.
    """
    val_n = int(np.rint(n * spec.val_fraction))
    if val_n < 1 or val_n > n - 1:
        raise ConfigError(
            f"val_fraction {spec.val_fraction} leaves an empty side for n={n}"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    return np.sort(perm[val_n:]), np.sort(perm[:val_n])


def split_train_val(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic unstratified split into (train, val).

    The validation size is n * val_fraction rounded to the nearest
    integer; both sides keep their instances in the original order.
    """
    train_idx, val_idx = split_indices(dataset.n, spec)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def normalize_features(dataset: Dataset, method: str = "none") -> Dataset:
    """Feature normalization: none, minmax (per column), or zscore.

    Constant columns map to exactly zero under zscore and to zero under
    minmax.
    """
    if method == "none":
        return dataset
    x = np.array(dataset.features)
    if method == "minmax":
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        span = hi - lo
        keep = span > 0.0
        x[:, keep] = (x[:, keep] - lo[keep]) / span[keep]
        x[:, ~keep] = 0.0
    elif method == "zscore":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        keep = std > 0.0
        x[:, keep] = (x[:, keep] - mean[keep]) / std[keep]
        x[:, ~keep] = 0.0
    else:
        raise ConfigError(f"unknown normalization {method!r}")
    return dataset.replace(features=x)


def save_bundle(
    dataset: Dataset, directory: str | Path, extra_meta: dict | None = None
) -> None:
    """Write a dataset bundle directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "features.csv", dataset.features, fmt="%.17g", delimiter=",")
    if dataset.clean_labels is not None:
        np.savetxt(directory / "clean_labels.csv", dataset.clean_labels, fmt="%d")
    if dataset.noisy_labels is not None:
        np.savetxt(directory / "noisy_labels.csv", dataset.noisy_labels, fmt="%d")
    if dataset.true_rows is not None:
        np.savetxt(directory / "true_rows.csv", dataset.true_rows, fmt="%.17g", delimiter=",")
    meta = {
        "n": dataset.n,
        "d": dataset.d,
        "class_count": dataset.class_count,
    }
    if extra_meta:
        meta.update(extra_meta)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_bundle(directory: str | Path) -> tuple[Dataset, dict]:
    """Load a dataset bundle; returns (dataset, meta).

    Features come from features.csv, or from an images.idx/labels.idx
    pair when no CSV is present.
    """
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{directory}: not a dataset bundle (missing meta.json)")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{meta_path}: cannot parse meta.json: {exc}") from exc

    clean = None
    if (directory / "features.csv").exists():
        features = np.loadtxt(directory / "features.csv", delimiter=",", ndmin=2)
        if (directory / "clean_labels.csv").exists():
            clean = np.loadtxt(directory / "clean_labels.csv", dtype=np.int64, ndmin=1)
    elif (directory / "images.idx").exists() and (directory / "labels.idx").exists():
        idx = load_idx(directory / "images.idx", directory / "labels.idx")
        features, clean = idx.features, idx.clean_labels
    else:
        raise DataError(f"{directory}: bundle has neither features.csv nor an IDX pair")

    noisy = None
    if (directory / "noisy_labels.csv").exists():
        noisy = np.loadtxt(directory / "noisy_labels.csv", dtype=np.int64, ndmin=1)
    rows = None
    if (directory / "true_rows.csv").exists():
        rows = np.loadtxt(directory / "true_rows.csv", delimiter=",", ndmin=2)

    class_count = meta.get("class_count")
    if class_count is None:
        if clean is None:
            raise DataError(f"{directory}: meta.json lacks class_count")
        class_count = int(clean.max()) + 1
    dataset = Dataset(
        features=features,
        clean_labels=clean,
        noisy_labels=noisy,
        class_count=int(class_count),
        true_rows=rows,
    )
    if dataset.n != int(meta.get("n", dataset.n)) or dataset.d != int(meta.get("d", dataset.d)):
        raise DataError(f"{directory}: meta.json n/d disagree with features.csv")
    return dataset, meta
