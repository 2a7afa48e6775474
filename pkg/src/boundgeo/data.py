"""Synthetic datasets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DATASET_KINDS = ("blobs", "rings")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "rings"
    seed: int = 0
    d: int = 100
    L: int = 2
    n: int = 2000
    noise: float = 0.05
    separation: float = 3.0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    config: DatasetConfig

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if n == 0 or self.points.shape[0] != n:
            raise DataError("dataset must be nonempty with one label per point")
        if self.labels.min() < 0 or self.labels.max() >= self.config.L:
            raise DataError(f"labels must lie in [0, {self.config.L})")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return (
            Dataset(self.points[:n_first], self.labels[:n_first], self.config),
            Dataset(self.points[n_first:], self.labels[n_first:], self.config),
        )


def gen_dataset(config: DatasetConfig) -> Dataset:
    """Deterministic synthetic data; identical configs give identical arrays.

    blobs: L Gaussian clusters around random unit directions scaled by
    ``separation``.  rings: two classes on circles of radius 1 and 2 in a
    random 2-D plane of R^d, with isotropic Gaussian noise in all d
    coordinates.
    """
    c = config
    if c.kind not in DATASET_KINDS:
        raise DataError(f"unknown dataset kind {c.kind!r}")
    if c.d < 1 or c.n < 1 or c.noise < 0:
        raise DataError("d and n must be positive and noise non-negative")
    if c.kind == "rings" and c.L != 2:
        raise DataError("rings datasets have exactly two classes")
    if c.L > c.n:
        raise DataError(f"more classes (L={c.L}) than points (n={c.n})")
    rng = np.random.default_rng(c.seed)
    labels = np.arange(c.n) % c.L
    rng.shuffle(labels)

    if c.kind == "blobs":
        means = rng.standard_normal((c.L, c.d))
        means *= c.separation / np.linalg.norm(means, axis=1, keepdims=True)
        X = means[labels] + c.noise * rng.standard_normal((c.n, c.d))
    else:
        if c.d < 2:
            raise DataError("rings need d >= 2")
        Q, _ = np.linalg.qr(rng.standard_normal((c.d, c.d)))
        theta = rng.uniform(0.0, 2.0 * np.pi, c.n)
        radius = 1.0 + labels
        planar = np.zeros((c.n, c.d))
        planar[:, 0] = radius * np.cos(theta)
        planar[:, 1] = radius * np.sin(theta)
        X = (planar + c.noise * rng.standard_normal((c.n, c.d))) @ Q.T
    return Dataset(X, labels, config)
