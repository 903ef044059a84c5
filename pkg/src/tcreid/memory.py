"""Feature memory bank used both as an N-way classifier and for clustering."""
from __future__ import annotations

import logging
import threading

import numpy as np

from .data import read_matrix, write_matrix

logger = logging.getLogger(__name__)


def alpha_schedule(epoch: int, total_epochs: int) -> float:
    """Update rate that rises linearly from 0 at the first epoch to 1 at the last."""
    if total_epochs < 1 or not 0 <= epoch <= total_epochs:
        raise ValueError(f"need 0 <= epoch <= total_epochs and total_epochs >= 1, got {epoch}/{total_epochs}")
    return epoch / total_epochs


class MemoryBank:
    """N unit-norm feature slots.

    Rows are kept at unit L2 norm after every update; an update that would
    collapse a row to zero leaves the old row in place and records the index
    in :attr:`degenerate_updates`.
    """

    def __init__(self, slots: np.ndarray, epoch_alpha: float = 0.0):
        self.slots = np.array(slots, dtype=np.float64)
        self.epoch_alpha = epoch_alpha
        self.degenerate_updates: list[int] = []
        self._lock = threading.Lock()

    @classmethod
    def init(cls, features: np.ndarray) -> "MemoryBank":
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be an N x d matrix")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        norms = np.linalg.norm(feats, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"row {zero[0]} is all zeros and cannot be normalized")
        return cls(feats / norms[:, None])

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def dim(self) -> int:
        return self.slots.shape[1]

    def update(self, i: int, feature: np.ndarray, alpha: float) -> "MemoryBank":
        """``slot_i <- normalize((1 - alpha) * slot_i + alpha * feature)``, in place."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        mixed = (1.0 - alpha) * self.slots[i] + alpha * np.asarray(feature, dtype=np.float64)
        norm = np.linalg.norm(mixed)
        if norm < 1e-12:
            logger.warning("update of slot %d cancels out (antipodal feature); keeping old row", i)
            self.degenerate_updates.append(int(i))
            return self
        with self._lock:
            self.slots[i] = mixed / norm
        return self

    def update_many(self, indices, features: np.ndarray, alpha: float) -> "MemoryBank":
        for i, f in zip(indices, features):
            self.update(int(i), f, alpha)
        return self

    def save(self, path) -> None:
        write_matrix(path, self.slots)

    @classmethod
    def load(cls, path) -> "MemoryBank":
        return cls.init(read_matrix(path))
