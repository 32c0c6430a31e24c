"""Seeded synthetic classification data and a resumable batch stream."""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from ..schedule import ConfigError

__all__ = ["Dataset", "gen_dataset", "split_holdout", "batch_indices"]


class Dataset(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    centroids: np.ndarray

    def __len__(self):
        return len(self.y)


def gen_dataset(seed: int, num_samples: int, input_dim: int, num_classes: int, noise_level: float) -> Dataset:
    """Gaussian blobs: one standard-normal centroid per class plus isotropic noise.

    Labels are balanced (counts differ by at most one) and shuffled.
    """
    if num_samples < num_classes:
        raise ConfigError("data.num_samples", f"need at least num_classes={num_classes} samples, got {num_samples}")
    if noise_level < 0:
        raise ConfigError("data.noise_level", "must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([seed % 2**64, 0xDA7A]))
    centroids = rng.standard_normal((num_classes, input_dim))
    y = rng.permutation(np.arange(num_samples) % num_classes)
    noise = rng.standard_normal((num_samples, input_dim))
    x = centroids[y] + noise_level * noise
    return Dataset(x, y, centroids)


def split_holdout(ds: Dataset, fraction: float) -> tuple[Dataset, Dataset]:
    """Hold out the last ``round(fraction * n)`` samples (the data is already shuffled)."""
    n_hold = int(round(fraction * len(ds)))
    cut = len(ds) - n_hold
    train = Dataset(ds.x[:cut], ds.y[:cut], ds.centroids)
    hold = Dataset(ds.x[cut:], ds.y[cut:], ds.centroids)
    return train, hold


@lru_cache(maxsize=64)
def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    order = np.random.default_rng(np.random.SeedSequence([seed % 2**64, 0x0BA7C, epoch])).permutation(n)
    order.flags.writeable = False
    return order


def batch_indices(seed: int, n: int, batch_size: int, cursor: int) -> np.ndarray:
    """Sample indices of micro-batch number ``cursor`` in an endless reshuffled stream.

    Stream position q is sample ``perm_e[q % n]`` with ``e = q // n`` and a fresh
    permutation per pass, so any batch is a pure function of its cursor.
    """
    q = np.arange(cursor * batch_size, (cursor + 1) * batch_size)
    epochs = q // n
    out = np.empty(batch_size, dtype=np.int64)
    for e in np.unique(epochs):
        sel = epochs == e
        out[sel] = _epoch_order(seed, int(e), n)[q[sel] % n]
    return out
