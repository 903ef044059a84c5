"""Camera-pair frame-interval histograms and the temporal consistency score.

Intervals are signed frame differences.  For a pair of images ``i`` at camera
``a`` and ``j`` at camera ``b`` with ``a < b`` the interval is
``frame_i - frame_j`` and is looked up in the histogram stored under
``(a, b)``.  Reading the pair the other way round flips the sign, so both
orderings land in the same bin.  Same-camera pairs use the absolute interval.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, SampleMeta

logger = logging.getLogger(__name__)

NEUTRAL_TS = 0.5


@dataclass(frozen=True)
class BinSpec:
    bin_width: float = 100.0
    max_interval: float = 3000.0

    def __post_init__(self):
        if not (self.bin_width > 0 and self.max_interval > 0):
            raise ValueError(f"bin_width and max_interval must be positive, got {self}")

    @property
    def num_bins(self) -> int:
        return int(math.floor(2 * self.max_interval / self.bin_width)) + 1

    @property
    def lower_edges(self) -> np.ndarray:
        return -self.max_interval + self.bin_width * np.arange(self.num_bins)

    @property
    def centers(self) -> np.ndarray:
        return self.lower_edges + 0.5 * self.bin_width

    def index(self, interval):
        """Bin index of each interval, or -1 where it falls outside the support."""
        interval = np.asarray(interval, dtype=np.float64)
        idx = np.floor((interval + self.max_interval) / self.bin_width).astype(np.int64)
        outside = np.abs(interval) > self.max_interval
        return np.where(outside, -1, idx)


def camera_pairs(num_cameras: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(num_cameras) for b in range(a, num_cameras)]


@dataclass
class TemporalModel:
    """Per camera pair interval histograms on a shared bin grid.

    ``histograms[(a, b)]`` (with ``a <= b``) holds one value per bin, or is
    ``None`` when no same-label pair was observed for that camera pair.
    ``smoothing_sigma`` is ``None`` for a raw estimate.
    """

    num_cameras: int
    binning: BinSpec
    histograms: dict[tuple[int, int], np.ndarray | None]
    smoothing_sigma: float | None = None
    max_normalize: bool = True
    intra_camera: bool = True
    _table: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for key in camera_pairs(self.num_cameras):
            self.histograms.setdefault(key, None)
        for key, h in self.histograms.items():
            if h is not None and (h.shape != (self.binning.num_bins,) or np.any(h < 0)):
                raise ValueError(f"histogram {key} must be non-negative with {self.binning.num_bins} bins")

    @property
    def empty_pairs(self) -> list[tuple[int, int]]:
        return sorted(k for k, h in self.histograms.items() if h is None)

    def histogram(self, a: int, b: int) -> np.ndarray | None:
        return self.histograms[(min(a, b), max(a, b))]

    def lookup_table(self) -> np.ndarray:
        """Dense ``(C, C, num_bins + 1)`` array of ts values.

        Entry ``[a, b, k]`` for ``a <= b`` is the (optionally max-normalized)
        value of bin ``k``; the extra last slot is the out-of-support value 0.
        Empty pairs are filled with the neutral value, and same-camera pairs
        too when the intra-camera extension is disabled.
        """
        if self._table is None:
            c, nb = self.num_cameras, self.binning.num_bins
            table = np.zeros((c, c, nb + 1))
            for (a, b), h in self.histograms.items():
                if h is None or (a == b and not self.intra_camera):
                    table[a, b, :] = NEUTRAL_TS
                    continue
                vals = h.astype(np.float64)
                if self.max_normalize:
                    peak = vals.max()
                    vals = vals / peak if peak > 0 else vals
                table[a, b, :nb] = vals
            table.flags.writeable = False
            self._table = table
        return self._table

    def ts_matrix(self, cams_q, frames_q, cams_g, frames_g) -> np.ndarray:
        """Temporal consistency for every (query, gallery) pair."""
        cq = np.asarray(cams_q, dtype=np.int64)[:, None]
        cg = np.asarray(cams_g, dtype=np.int64)[None, :]
        fq = np.asarray(frames_q, dtype=np.int64)[:, None]
        fg = np.asarray(frames_g, dtype=np.int64)[None, :]
        diff = fq - fg
        interval = np.where(cq < cg, diff, np.where(cq > cg, -diff, np.abs(diff)))
        idx = self.binning.index(interval)
        idx = np.where(idx < 0, self.binning.num_bins, idx)
        lo = np.minimum(cq, cg)
        hi = np.maximum(cq, cg)
        return self.lookup_table()[lo, hi, idx]

    def ts(self, meta_i: SampleMeta, meta_j: SampleMeta) -> float:
        """Temporal consistency of two images, in [0, 1] when max-normalized."""
        key = (min(meta_i.camera_id, meta_j.camera_id), max(meta_i.camera_id, meta_j.camera_id))
        if self.histograms[key] is None:
            logger.debug("empty histogram for camera pair %s, using neutral ts", key)
        out = self.ts_matrix([meta_i.camera_id], [meta_i.frame_id], [meta_j.camera_id], [meta_j.frame_id])
        return float(out[0, 0])

    def to_text(self) -> str:
        lines = [
            "# temporal model",
            f"num_cameras={self.num_cameras}",
            f"bin_width={float(self.binning.bin_width)!r}",
            f"max_interval={float(self.binning.max_interval)!r}",
            f"smoothing_sigma={'none' if self.smoothing_sigma is None else repr(float(self.smoothing_sigma))}",
            f"max_normalize={int(self.max_normalize)}",
            f"intra_camera={int(self.intra_camera)}",
        ]
        centers = self.binning.centers
        for (a, b) in camera_pairs(self.num_cameras):
            h = self.histograms[(a, b)]
            if h is None:
                lines.append(f"pair {a} {b} EMPTY")
                continue
            nz = np.flatnonzero(h)
            lines.append(f"pair {a} {b} {nz.size}")
            lines.extend(f"{float(centers[k])!r} {float(h[k])!r}" for k in nz)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TemporalModel":
        params: dict[str, str] = {}
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        pos = 0
        while pos < len(lines) and not lines[pos].startswith("pair "):
            key, _, value = lines[pos].partition("=")
            params[key.strip()] = value.strip()
            pos += 1
        try:
            binning = BinSpec(float(params["bin_width"]), float(params["max_interval"]))
            c = int(params["num_cameras"])
            sigma = None if params["smoothing_sigma"] == "none" else float(params["smoothing_sigma"])
        except KeyError as exc:
            raise ValueError(f"temporal model text lacks {exc.args[0]}") from None
        hists: dict[tuple[int, int], np.ndarray | None] = {}
        while pos < len(lines):
            parts = lines[pos].split()
            if parts[0] != "pair" or len(parts) != 4:
                raise ValueError(f"bad pair line {lines[pos]!r}")
            a, b = int(parts[1]), int(parts[2])
            pos += 1
            if parts[3] == "EMPTY":
                hists[(a, b)] = None
                continue
            h = np.zeros(binning.num_bins)
            for _ in range(int(parts[3])):
                center, value = (float(v) for v in lines[pos].split())
                h[int(round((center - 0.5 * binning.bin_width + binning.max_interval) / binning.bin_width))] = value
                pos += 1
            hists[(a, b)] = h
        return cls(
            c, binning, hists, sigma,
            max_normalize=bool(int(params.get("max_normalize", "1"))),
            intra_camera=bool(int(params.get("intra_camera", "1"))),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "TemporalModel":
        return cls.from_text(Path(path).read_text())


def estimate_histograms(
    d: Dataset,
    labels,
    binning: BinSpec,
    intra_camera: bool = True,
) -> TemporalModel:
    """Estimate raw interval histograms from (pseudo) identity labels.

    For every camera pair, each bin holds the fraction of same-label image
    pairs whose interval falls in that bin.  Pairs outside the support are
    dropped from both counts.  Labels < 0 never match anything.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(d),):
        raise ValueError(f"need one label per sample, got {labels.shape} for {len(d)} samples")
    if len(d) < 2:
        raise ValueError("need at least two samples")
    nb = binning.num_bins
    counts = {key: np.zeros(nb) for key in camera_pairs(d.num_cameras)}
    cams, frames = d.camera_ids, d.frame_ids
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1]])
    ends = np.r_[starts[1:], len(order)]
    for s, e in zip(starts, ends):
        if sorted_labels[s] < 0 or e - s < 2:
            continue
        members = order[s:e]
        c, f = cams[members], frames[members]
        ci, cj = c[:, None], c[None, :]
        diff = f[:, None] - f[None, :]
        # each cross-camera pair once, oriented from the lower camera;
        # each same-camera pair once (i < j) with the absolute interval
        upper = np.triu(np.ones((len(members),) * 2, dtype=bool), k=1)
        take = (ci < cj) | ((ci == cj) & upper)
        interval = np.where(ci == cj, np.abs(diff), diff)[take]
        a, b = np.broadcast_to(ci, take.shape)[take], np.broadcast_to(cj, take.shape)[take]
        idx = binning.index(interval)
        keep = idx >= 0
        for key in {(int(x), int(y)) for x, y in zip(a[keep], b[keep])}:
            sel = keep & (a == key[0]) & (b == key[1])
            np.add.at(counts[key], idx[sel], 1.0)
    hists: dict[tuple[int, int], np.ndarray | None] = {}
    for key, cnt in counts.items():
        total = cnt.sum()
        hists[key] = cnt / total if total > 0 else None
    model = TemporalModel(d.num_cameras, binning, hists, None, intra_camera=intra_camera)
    if model.empty_pairs:
        logger.info("no same-label pairs for camera pairs %s", model.empty_pairs)
    return model


def gaussian_kernel(sigma_bins: float) -> np.ndarray:
    """Discrete Gaussian truncated at 3 sigma and normalized to sum 1."""
    if sigma_bins <= 0:
        return np.ones(1)
    half = int(math.floor(3.0 * sigma_bins))
    k = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma_bins) ** 2)
    return w / w.sum()


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric reflection: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    period = 2 * n
    r = np.mod(idx, period)
    return np.where(r < n, r, period - 1 - r)


def smooth_histogram(h: np.ndarray, sigma_bins: float) -> np.ndarray:
    """Convolve with a truncated Gaussian, reflecting mass at the support edges
    so the total is conserved."""
    kernel = gaussian_kernel(sigma_bins)
    if kernel.size == 1:
        return h.copy()
    n = h.size
    half = kernel.size // 2
    out = np.zeros(n)
    src = np.arange(n)
    for off, w in zip(range(-half, half + 1), kernel):
        np.add.at(out, _reflect(src + off, n), w * h)
    return out


def smooth(model: TemporalModel, sigma: float) -> TemporalModel:
    """Gaussian-smooth every histogram; ``sigma`` is in frames."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    sigma_bins = sigma / model.binning.bin_width
    hists = {
        key: (None if h is None else (h.copy() if sigma == 0 else smooth_histogram(h, sigma_bins)))
        for key, h in model.histograms.items()
    }
    return TemporalModel(
        model.num_cameras, model.binning, hists, float(sigma),
        max_normalize=model.max_normalize, intra_camera=model.intra_camera,
    )
