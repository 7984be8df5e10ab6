"""Long-tailed vector datasets: synthesis, CSV ingestion, splitting, resampling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, ParseError

log = logging.getLogger(__name__)


class LabeledVector(NamedTuple):
    x: np.ndarray
    y: int


@dataclass
class Dataset:
    X: np.ndarray  # (N, d) float64
    y: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError(f"inconsistent shapes X={self.X.shape}, y={self.y.shape}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite feature values")

    def __len__(self):
        return len(self.y)

    def __iter__(self) -> Iterator[LabeledVector]:
        for x, y in zip(self.X, self.y):
            yield LabeledVector(x, int(y))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


def long_tail_counts(num_classes: int, n_max: int, imbalance_ratio: float) -> list[int]:
    """Exponentially decaying class sizes n_max * ratio^(-c/(C-1)), half-up rounded."""
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    if imbalance_ratio < 1:
        raise ConfigError("imbalance_ratio must be >= 1")
    if n_max < imbalance_ratio:
        raise ConfigError("n_max must be >= imbalance_ratio")
    return [
        int(math.floor(n_max * imbalance_ratio ** (-c / (num_classes - 1)) + 0.5))
        for c in range(num_classes)
    ]


def generate_long_tailed(
    num_classes: int,
    n_max: int,
    imbalance_ratio: float,
    dim: int,
    separation: float = 3.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian classes with unit covariance and means on a sphere of radius ``separation``."""
    counts = long_tail_counts(num_classes, n_max, imbalance_ratio)
    if dim < 1:
        raise ConfigError("dim must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    X = np.concatenate([means[c] + rng.standard_normal((n, dim)) for c, n in enumerate(counts)])
    y = np.repeat(np.arange(num_classes), counts)
    return Dataset(X, y, num_classes)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"v{i + 1}" for i in range(dataset.dim)])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_embeddings_csv(path) -> Dataset:
    """Read rows of ``label, v_1, ..., v_d``; a non-numeric first row is a header."""
    path = Path(path)
    labels, rows = [], []
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if lineno == 1 and not all(_is_number(f) for f in rec):
                continue
            if len(rec) < 2:
                raise ParseError("expected a label and at least one value", lineno)
            if dim is None:
                dim = len(rec) - 1
            elif len(rec) - 1 != dim:
                raise ParseError(f"expected {dim} values, found {len(rec) - 1}", lineno)
            try:
                label = int(rec[0])
            except ValueError:
                raise ParseError(f"label {rec[0]!r} is not an integer", lineno) from None
            if label < 0:
                raise ParseError(f"negative label {label}", lineno)
            try:
                vals = [float(f) for f in rec[1:]]
            except ValueError as e:
                raise ParseError(f"non-numeric value ({e})", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", lineno)
            labels.append(label)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path} contains no data rows")
    y = np.array(labels, dtype=np.int64)
    return Dataset(np.array(rows, dtype=np.float64), y, int(y.max()) + 1)


def split(dataset: Dataset, train_fraction: float = 0.7, seed: int = 0, mode: str = "stratified"):
    """Partition into (train, test).

    ``stratified`` rounds ``n_c * train_fraction`` per class and keeps at
    least one sample of every class with two or more samples on each side.
    ``random`` is a plain shuffled cut of the whole dataset.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if mode == "random":
        perm = rng.permutation(len(dataset))
        n_train = int(math.floor(len(dataset) * train_fraction + 0.5))
        tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        return dataset.subset(tr), dataset.subset(te)
    if mode != "stratified":
        raise ConfigError(f"unknown split mode {mode!r}")
    tr, te = [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.y == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        if idx.size == 1:
            log.warning("class %d has a single sample; placing it in train", c)
            tr.append(idx)
            continue
        k = int(math.floor(idx.size * train_fraction + 0.5))
        k = min(max(k, 1), idx.size - 1)
        tr.append(idx[:k])
        te.append(idx[k:])
    tr = np.sort(np.concatenate(tr)) if tr else np.array([], dtype=np.int64)
    te = np.sort(np.concatenate(te)) if te else np.array([], dtype=np.int64)
    return dataset.subset(tr), dataset.subset(te)


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of index batches over a random permutation."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def balanced_resample_iterator(dataset: Dataset, batch_size: int, seed=0) -> Iterator[np.ndarray]:
    """Endless stream of index batches with classes drawn uniformly.

    Each slot picks a class uniformly among the non-empty ones, then a sample
    of that class uniformly with replacement.  ``seed`` may also be a
    ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    members = [np.flatnonzero(dataset.y == c) for c in range(dataset.num_classes)]
    members = [m for m in members if m.size]
    sizes = np.array([m.size for m in members])
    while True:
        cls = rng.integers(len(members), size=batch_size)
        pos = (rng.random(batch_size) * sizes[cls]).astype(np.int64)
        yield np.array([members[c][p] for c, p in zip(cls, pos)], dtype=np.int64)
