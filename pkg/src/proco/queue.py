"""Fixed-capacity FIFO of momentum-encoder features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class QueueEntry:
    g_feat: np.ndarray
    f_feat: np.ndarray
    label: int


class SampleQueue:
    """Entries are kept oldest-first; enqueueing past capacity evicts the oldest."""

    def __init__(self, capacity: int, dim: int, num_classes: int | None = None):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self.num_classes = num_classes
        self.g = np.empty((0, dim))
        self.f = np.empty((0, dim))
        self.labels = np.empty(0, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        for g, f, y in zip(self.g, self.f, self.labels):
            yield QueueEntry(g, f, int(y))

    def entries(self) -> list[QueueEntry]:
        return list(self)

    def enqueue_arrays(self, g, f, labels) -> None:
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        f = np.atleast_2d(np.asarray(f, dtype=np.float64))
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if g.shape[1:] != (self.dim,) or f.shape != g.shape or labels.shape != (g.shape[0],):
            raise InvariantError(f"bad entry shapes g={g.shape} f={f.shape} labels={labels.shape}")
        norms = np.linalg.norm(g, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise InvariantError("queue g_feat must be unit norm")
        if labels.size and labels.min() < 0:
            raise InvariantError("negative label")
        if self.num_classes is not None and labels.size and labels.max() >= self.num_classes:
            raise InvariantError("label out of range")
        keep = self.capacity
        self.g = np.concatenate([self.g, g])[-keep:]
        self.f = np.concatenate([self.f, f])[-keep:]
        self.labels = np.concatenate([self.labels, labels])[-keep:]

    def enqueue_batch(self, entries) -> None:
        entries = list(entries)
        if not entries:
            return
        self.enqueue_arrays(
            np.stack([e.g_feat for e in entries]),
            np.stack([e.f_feat for e in entries]),
            np.array([e.label for e in entries]),
        )

    def partition(self, y: int) -> tuple[list[QueueEntry], list[QueueEntry]]:
        """Split into (same-label entries, other-label entries), queue order kept."""
        pos, neg = [], []
        for e in self:
            (pos if e.label == y else neg).append(e)
        return pos, neg

    def snapshot(self) -> "SampleQueue":
        q = SampleQueue(self.capacity, self.dim, self.num_classes)
        q.g, q.f, q.labels = self.g.copy(), self.f.copy(), self.labels.copy()
        return q
