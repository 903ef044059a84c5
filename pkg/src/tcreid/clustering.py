"""Density clustering on a similarity matrix and multi-label construction."""
from __future__ import annotations

import logging
from collections import deque
from pathlib import Path

import numpy as np

from .data import MultiLabels

logger = logging.getLogger(__name__)

NOISE = -1


def neighbor_lists(sim: np.ndarray, eps: float) -> list[np.ndarray]:
    """Ascending indices within distance ``eps`` (distance = 1 - sim), self included."""
    close = (1.0 - np.asarray(sim)) <= eps
    return [np.flatnonzero(row) for row in close]


def dbscan(sim: np.ndarray, eps: float = 0.6, min_pts: int = 4, reverse: bool = False) -> np.ndarray:
    """DBSCAN over ``1 - sim``.

    Points are visited in ascending index order (descending with
    ``reverse=True``) and neighbors are expanded in that same order, so
    border points shared by two clusters always join the first one found.
    Returns contiguous cluster ids from 0, with :data:`NOISE` for noise.
    """
    sim = np.asarray(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {sim.shape}")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(sim)
    neighbors = neighbor_lists(sim, eps)
    if reverse:
        neighbors = [nb[::-1] for nb in neighbors]
    core = np.array([len(nb) >= min_pts for nb in neighbors], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    visit = range(n - 1, -1, -1) if reverse else range(n)
    cluster = 0
    for start in visit:
        if labels[start] != NOISE or not core[start]:
            continue
        labels[start] = cluster
        queue = deque([start])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1
    return labels


def core_points(sim: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    return np.array([len(nb) >= min_pts for nb in neighbor_lists(sim, eps)], dtype=bool)


def labels_from_clusters(assign) -> MultiLabels:
    """Positive set of each sample = every member of its cluster; noise points
    are their own singleton cluster."""
    assign = np.asarray(assign, dtype=np.int64)
    members: dict[int, np.ndarray] = {}
    for cid in np.unique(assign[assign != NOISE]):
        members[int(cid)] = np.flatnonzero(assign == cid)
    return MultiLabels(
        [members[int(c)] if c != NOISE else np.array([i], dtype=np.int64) for i, c in enumerate(assign)]
    )


def pseudo_labels(assign) -> np.ndarray:
    """Identity labels for temporal estimation: cluster ids, noise left as -1."""
    return np.asarray(assign, dtype=np.int64).copy()


def purity(assign, true_ids) -> float:
    """Majority-identity fraction over the non-noise points."""
    assign = np.asarray(assign, dtype=np.int64)
    true_ids = np.asarray(true_ids, dtype=np.int64)
    clustered = assign != NOISE
    if not clustered.any():
        logger.warning("purity undefined: every point is noise")
        return 0.0
    total = 0
    for cid in np.unique(assign[clustered]):
        _, counts = np.unique(true_ids[assign == cid], return_counts=True)
        total += counts.max()
    return total / int(clustered.sum())


def num_clusters(assign) -> int:
    assign = np.asarray(assign)
    return int(np.unique(assign[assign != NOISE]).size)


def save_assignment(path, assign) -> None:
    lines = ["sample_id,cluster_id"] + [f"{i},{int(c)}" for i, c in enumerate(assign)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_assignment(path) -> np.ndarray:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].strip() != "sample_id,cluster_id":
        raise ValueError(f"{path}: expected header sample_id,cluster_id")
    out = {}
    for lineno, line in enumerate(rows[1:], start=2):
        if not line.strip():
            continue
        try:
            sid, cid = (int(v) for v in line.split(","))
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: bad row {line!r}") from None
        out[sid] = cid
    if sorted(out) != list(range(len(out))):
        raise ValueError(f"{path}: sample ids are not contiguous from 0")
    return np.array([out[i] for i in range(len(out))], dtype=np.int64)


def save_multilabels(path, labels: MultiLabels) -> None:
    lines = [f"{i}: " + " ".join(str(int(j)) for j in p) for i, p in enumerate(labels.positives)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_multilabels(path) -> MultiLabels:
    positives = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        head, _, tail = line.partition(":")
        if int(head) != i:
            raise ValueError(f"{path}: expected row {i}, got {head!r}")
        positives.append(np.array([int(v) for v in tail.split()], dtype=np.int64))
    return MultiLabels(positives)
