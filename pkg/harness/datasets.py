import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from model.mlp import Batch
from numeric.core import FLOAT, RngStream, STREAM_DATA, STREAM_SHUFFLE
from numeric.errors import ConfigError, DomainError, ShapeError

log = logging.getLogger(__name__)


class Provenance(str, Enum):
    SYNTHETIC_GAUSSIANS = "synthetic_gaussians"
    SYNTHETIC_RINGS = "synthetic_rings"
    IDX_FILES = "idx_files"


@dataclass(frozen=True)
class DatasetHandle:
    """Train/test arrays with inputs in [0, 1]^d and labels in [0, K).

    image_shape is (rows, cols) when the d inputs form a square-ish image.
    """

    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    d: int
    K: int
    provenance: Provenance
    image_shape: tuple = None

    def __post_init__(self):
        for x, y, split in ((self.train_x, self.train_y, "train"), (self.test_x, self.test_y, "test")):
            if x.ndim != 2 or x.shape[1] != self.d:
                raise ShapeError(f"{self.name} {split} inputs have shape {x.shape}, expected (n, {self.d})")
            if y.shape != (x.shape[0],):
                raise ShapeError(f"{self.name} {split} has {y.shape} labels for {x.shape[0]} inputs")
            if y.size and (y.min() < 0 or y.max() >= self.K):
                raise DomainError(f"{self.name} {split} labels outside [0, {self.K})")
            if x.size and (x.min() < 0.0 or x.max() > 1.0):
                raise DomainError(f"{self.name} {split} inputs outside [0, 1]")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def train(self):
        return Batch(self.train_x, self.train_y)

    @property
    def test(self):
        return Batch(self.test_x, self.test_y)

    def epoch_batches(self, epoch, batch_size, seed):
        """
        Minibatches for one epoch, shuffled by a stream keyed on (seed, epoch).

        The order depends only on its arguments, so a resumed run sees the same
        batches as an uninterrupted one.
        """
        n = self.train_x.shape[0]
        if n == 0:
            raise DomainError(f"{self.name} has no training examples")
        order = RngStream(seed, STREAM_SHUFFLE, epoch).permutation(n)
        return [
            Batch(self.train_x[order[i:i + batch_size]], self.train_y[order[i:i + batch_size]])
            for i in range(0, n, batch_size)
        ]

    def with_train_example(self, index, x, y):
        """Copy with training example `index` replaced by (x, y)."""
        train_x = self.train_x.copy()
        train_y = self.train_y.copy()
        train_x[index] = x
        train_y[index] = y
        return replace(self, train_x=train_x, train_y=train_y)

    def with_test_inputs(self, test_x, name=None):
        return replace(self, test_x=np.asarray(test_x, dtype=FLOAT), name=name or self.name)


def class_means(d, K, separation):
    """Blob centres at 0.5 +/- separation/2 along axis k // 2."""
    if K > 2 * d:
        raise ConfigError(f"cannot place {K} separated classes in {d} dimensions (need K <= 2d)")
    if not 0.0 <= separation <= 1.0:
        raise ConfigError(f"separation {separation} puts class means outside [0, 1]")
    means = np.full((K, d), 0.5)
    for k in range(K):
        means[k, k // 2] += separation / 2 if k % 2 == 0 else -separation / 2
    return means


def _balanced_labels(rng, n, K):
    return rng.permutation(np.arange(n) % K)


def gen_gaussians(seed, n, d, K, separation, sigma=0.1, n_test=None):
    """
    Isotropic Gaussian blobs clipped into the unit cube.

    Args:
        seed (int): dataset seed
        n (int): training examples
        d (int): input dimension
        K (int): classes, at most 2d
        separation (float): distance between paired class means, in [0, 1]
        sigma (float): per-coordinate standard deviation
        n_test (int): test examples, n // 2 by default

    Returns:
        DatasetHandle: deterministic for a given seed
    """
    if n <= 0 or d <= 0 or K <= 0:
        raise ConfigError(f"n, d, K must be positive, got {n}, {d}, {K}")
    if sigma < 0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    n_test = n // 2 if n_test is None else n_test
    means = class_means(d, K, separation)
    rng = RngStream(seed, STREAM_DATA)

    def draw(count):
        y = _balanced_labels(rng, count, K).astype(np.int64)
        x = means[y] + sigma * rng.normal((count, d))
        return np.clip(x, 0.0, 1.0), y

    train_x, train_y = draw(n)
    test_x, test_y = draw(n_test)
    log.debug("generated %d/%d gaussian examples (d=%d, K=%d, sep=%.3g)", n, n_test, d, K, separation)
    return DatasetHandle(f"gaussians-d{d}-k{K}", train_x, train_y, test_x, test_y, d, K,
                         Provenance.SYNTHETIC_GAUSSIANS)


def gen_rings(seed, n, d, K, width=0.05, n_test=None):
    """Concentric rings in the first two coordinates; remaining coordinates are uniform noise."""
    if n <= 0 or K <= 0 or d < 2:
        raise ConfigError(f"rings need n, K > 0 and d >= 2, got {n}, {d}, {K}")
    n_test = n // 2 if n_test is None else n_test
    radii = 0.45 * (np.arange(K) + 1) / K
    rng = RngStream(seed, STREAM_DATA)

    def draw(count):
        y = _balanced_labels(rng, count, K).astype(np.int64)
        angle = rng.uniform(0.0, 2 * np.pi, count)
        r = radii[y] + width * rng.normal(count)
        x = rng.uniform(0.0, 1.0, (count, d))
        x[:, 0] = 0.5 + r * np.cos(angle)
        x[:, 1] = 0.5 + r * np.sin(angle)
        return np.clip(x, 0.0, 1.0), y

    train_x, train_y = draw(n)
    test_x, test_y = draw(n_test)
    return DatasetHandle(f"rings-d{d}-k{K}", train_x, train_y, test_x, test_y, d, K,
                         Provenance.SYNTHETIC_RINGS)
