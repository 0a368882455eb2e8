"""Shared builders for synthetic datasets and bundles."""
import numpy as np
import pytest

from partnoise.dataio import Dataset, save_bundle


def make_blobs(n=240, seed=0, class_count=3, spread=0.6, radius=2.0):
    """Well-separated 2-D Gaussian blobs, one per class."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(class_count) / class_count
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = rng.integers(0, class_count, size=n)
    x = means[y] + spread * rng.standard_normal((n, 2))
    return Dataset(features=x, clean_labels=y, class_count=class_count)


@pytest.fixture(scope="session")
def blob_bundle(tmp_path_factory):
    """Clean 3-class bundle on disk, shared across tests that only read it."""
    path = tmp_path_factory.mktemp("data") / "blobs"
    save_bundle(make_blobs(), path)
    return path
