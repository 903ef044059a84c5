"""Visual, temporal and joint pairwise similarity."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SampleMeta, write_matrix
from .temporal import TemporalModel

DEFAULT_MAX_N = 20_000


class CapacityError(MemoryError):
    """Raised when a dense N x N matrix would exceed the configured cap."""


@dataclass(frozen=True)
class FusionParams:
    lambda0: float = 1.0
    lambda1: float = 2.0
    gamma0: float = 5.0
    gamma1: float = 5.0

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "gamma0", "gamma1"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


def joint_sim(vs, ts, p: FusionParams = FusionParams()):
    """Product of two logistic squashes, one for appearance and one for time.

    Works elementwise on arrays; always lands in (0, 1) for finite input.
    """
    vs = np.asarray(vs, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    out = 1.0 / (1.0 + p.lambda0 * np.exp(-p.gamma0 * vs)) / (1.0 + p.lambda1 * np.exp(-p.gamma1 * ts))
    return out if out.ndim else float(out)


def visual_sim(bank, i: int, j: int) -> float:
    """Cosine similarity of two memory-bank rows."""
    slots = getattr(bank, "slots", bank)
    a, b = np.asarray(slots[i], dtype=np.float64), np.asarray(slots[j], dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _check_capacity(n: int, max_n: int) -> None:
    if n > max_n:
        raise CapacityError(f"{n} samples exceed the dense similarity cap of {max_n}")


def _row_blocks(n: int, workers: int) -> list[slice]:
    step = max(1, -(-n // max(1, workers * 4)))
    return [slice(s, min(n, s + step)) for s in range(0, n, step)]


def _fill(n: int, block_fn, workers: int) -> np.ndarray:
    out = np.empty((n, n))
    blocks = _row_blocks(n, workers)
    if workers <= 1:
        for sl in blocks:
            out[sl] = block_fn(sl)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for sl, rows in zip(blocks, pool.map(block_fn, blocks)):
                out[sl] = rows
    return out


def pairwise_visual(bank, workers: int = 1, max_n: int = DEFAULT_MAX_N) -> np.ndarray:
    slots = np.asarray(getattr(bank, "slots", bank), dtype=np.float64)
    n = len(slots)
    _check_capacity(n, max_n)
    sim = _fill(n, lambda sl: slots[sl] @ slots.T, workers)
    # the product is symmetric up to rounding; make it exact
    sim = np.triu(sim) + np.triu(sim, 1).T
    np.fill_diagonal(sim, 1.0)
    return sim


def pairwise_temporal(metas: Sequence[SampleMeta], tm: TemporalModel) -> np.ndarray:
    cams = np.array([m.camera_id for m in metas])
    frames = np.array([m.frame_id for m in metas])
    return tm.ts_matrix(cams, frames, cams, frames)


def pairwise_joint(
    bank,
    metas: Sequence[SampleMeta],
    tm: TemporalModel,
    p: FusionParams = FusionParams(),
    workers: int = 1,
    max_n: int = DEFAULT_MAX_N,
) -> np.ndarray:
    slots = np.asarray(getattr(bank, "slots", bank), dtype=np.float64)
    n = len(slots)
    if len(metas) != n:
        raise ValueError(f"bank has {n} rows but {len(metas)} sample metas were given")
    _check_capacity(n, max_n)
    cams = np.array([m.camera_id for m in metas])
    frames = np.array([m.frame_id for m in metas])

    def block(sl):
        vs = slots[sl] @ slots.T
        ts = tm.ts_matrix(cams[sl], frames[sl], cams, frames)
        return joint_sim(vs, ts, p)

    sim = _fill(n, block, workers)
    sim = np.triu(sim) + np.triu(sim, 1).T
    np.fill_diagonal(sim, joint_sim(1.0, 1.0, p))
    return sim


def dump_matrix(path, sim: np.ndarray) -> None:
    write_matrix(path, sim)
