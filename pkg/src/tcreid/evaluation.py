"""Cross-camera retrieval evaluation: CMC, mAP, rank lists and ablation tables."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, ValidationError
from .similarity import FusionParams, joint_sim
from .temporal import TemporalModel

CMC_RANKS = (1, 5, 10, 20)


@dataclass
class EvalReport:
    mAP: float
    cmc: dict[int, float]
    mode: str
    ap: list[float] = field(default_factory=list)
    num_queries: int = 0
    skipped_queries: list[int] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "mAP"] + [f"rank{k}" for k in self.cmc] + ["num_queries", "skipped_queries"])
        w.writerow(
            [self.mode, f"{self.mAP:.6f}"] + [f"{v:.6f}" for v in self.cmc.values()]
            + [self.num_queries, len(self.skipped_queries)]
        )
        return buf.getvalue()


def average_precision(relevant: Sequence[bool]) -> float:
    """AP of one ranked relevance list (1 = relevant)."""
    rel = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def _order(scores: np.ndarray, sample_ids: np.ndarray) -> np.ndarray:
    # descending score, ties by ascending sample id
    return np.lexsort((sample_ids, -scores))


def score_matrix(
    features: np.ndarray,
    d: Dataset,
    query: Sequence[int],
    gallery: Sequence[int],
    mode: str = "visual",
    tm: TemporalModel | None = None,
    fusion: FusionParams = FusionParams(),
) -> np.ndarray:
    q = np.asarray(query, dtype=np.int64)
    g = np.asarray(gallery, dtype=np.int64)
    feats = np.asarray(features, dtype=np.float64)
    vs = feats[q] @ feats[g].T
    if mode == "visual":
        return vs
    if mode != "joint":
        raise ValueError(f"mode must be 'visual' or 'joint', got {mode!r}")
    if tm is None:
        raise ValueError("joint mode needs a temporal model")
    ts = tm.ts_matrix(d.camera_ids[q], d.frame_ids[q], d.camera_ids[g], d.frame_ids[g])
    return joint_sim(vs, ts, fusion)


def _query_ranking(scores_row, q, gallery, d: Dataset, exclude_junk: bool):
    g = np.asarray(gallery, dtype=np.int64)
    keep = np.ones(g.size, dtype=bool)
    if exclude_junk:
        keep = ~((d.person_ids[g] == d.person_ids[q]) & (d.camera_ids[g] == d.camera_ids[q]))
    g, s = g[keep], scores_row[keep]
    order = _order(s, g)
    return g[order], s[order]


def evaluate(
    query: Sequence[int],
    gallery: Sequence[int],
    features: np.ndarray,
    d: Dataset,
    tm: TemporalModel | None = None,
    mode: str = "visual",
    fusion: FusionParams = FusionParams(),
    workers: int = 1,
) -> EvalReport:
    """Rank the gallery for every query and score the rankings.

    Gallery images showing the query's person under the query's camera are
    ignored.  Queries left without any relevant gallery image are skipped
    and listed in the report.
    """
    if d.has_unknown_ids:
        raise ValidationError("evaluation needs known person ids for every sample")
    scores = score_matrix(features, d, query, gallery, mode, tm, fusion)

    def one(pos: int):
        q = int(query[pos])
        ranked, _ = _query_ranking(scores[pos], q, gallery, d, True)
        rel = d.person_ids[ranked] == d.person_ids[q]
        if not rel.any():
            return q, None, None
        return q, average_precision(rel), int(np.argmax(rel))

    positions = range(len(query))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, positions))
    else:
        results = [one(p) for p in positions]
    aps, first_hits, skipped = [], [], []
    for q, ap, first in results:
        if ap is None:
            skipped.append(q)
        else:
            aps.append(ap)
            first_hits.append(first)
    hits = np.asarray(first_hits)
    n = len(aps)
    cmc = {k: (float(np.mean(hits < k)) if n else 0.0) for k in CMC_RANKS}
    return EvalReport(float(np.mean(aps)) if n else 0.0, cmc, mode, aps, n, skipped)


def rank_query(
    q: int,
    gallery: Sequence[int],
    features: np.ndarray,
    d: Dataset,
    mode: str = "visual",
    tm: TemporalModel | None = None,
    top_k: int = 5,
    fusion: FusionParams = FusionParams(),
    exclude_junk: bool = True,
) -> list[tuple[int, float]]:
    """Top-``top_k`` gallery items for one query as ``(sample_id, score)``."""
    scores = score_matrix(features, d, [q], gallery, mode, tm, fusion)[0]
    ranked, s = _query_ranking(scores, q, gallery, d, exclude_junk and not d.has_unknown_ids)
    top_k = min(top_k, ranked.size)
    return [(int(i), float(v)) for i, v in zip(ranked[:top_k], s[:top_k])]


def ablation_report(rows: Sequence[tuple[str, EvalReport]]) -> str:
    """Aligned text table with one line per labeled report."""
    if not rows:
        raise ValueError("ablation report needs at least one row")
    header = ["Method", "mAP"] + [f"r{k}" for k in CMC_RANKS]
    body = []
    for label, rep in rows:
        if not rep.cmc or any(k not in rep.cmc for k in CMC_RANKS):
            raise ValueError(f"row {label!r} lacks CMC values for ranks {CMC_RANKS}")
        body.append([label, f"{100 * rep.mAP:.1f}"] + [f"{100 * rep.cmc[k]:.1f}" for k in CMC_RANKS])
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    fmt = lambda r: "  ".join(v.ljust(widths[0]) if c == 0 else v.rjust(widths[c]) for c, v in enumerate(r))
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"
