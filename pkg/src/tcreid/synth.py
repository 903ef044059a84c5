"""Synthetic camera networks with known identities and transit times.

Each person gets an appearance prototype and a start time.  Visit times at
the cameras are drawn jointly from a Gaussian whose pairwise differences have
exactly the configured transit means and standard deviations, and every image
is a camera-styled copy of the prototype plus noise.  Twins share almost the
same prototype but are placed half a time horizon apart, so only the temporal
cue can tell them apart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.special import ndtr

from .data import Dataset, FeatureStore, SampleMeta
from .temporal import BinSpec, TemporalModel, camera_pairs


@dataclass
class WorldConfig:
    num_persons: int = 100
    num_cameras: int = 3
    images_per_person_per_camera: int = 2
    feature_dim: int = 32
    appearance_spread: float = 0.5
    twin_fraction: float = 0.0
    transit_mean: np.ndarray | None = None
    transit_std: np.ndarray | None = None
    camera_style_strength: float = 0.5
    seed: int = 0
    # extensions over the bare model
    nuisance_dim: int = 0
    nuisance_std: float = 0.0
    dwell_frames: int = 25
    time_horizon: int = 200_000

    def __post_init__(self):
        c = self.num_cameras
        if self.num_persons < 1 or c < 1:
            raise ValueError("num_persons and num_cameras must be >= 1")
        if self.images_per_person_per_camera < 1 or self.feature_dim < 1:
            raise ValueError("images_per_person_per_camera and feature_dim must be >= 1")
        if self.appearance_spread < 0 or self.camera_style_strength < 0 or self.nuisance_std < 0:
            raise ValueError("spreads and strengths must be >= 0")
        if not 0.0 <= self.twin_fraction <= 1.0:
            raise ValueError("twin_fraction must lie in [0, 1]")
        if not 0 <= self.nuisance_dim < self.feature_dim:
            raise ValueError("nuisance_dim must be smaller than feature_dim")
        if self.dwell_frames < 1:
            raise ValueError("dwell_frames must be >= 1")
        if self.transit_mean is None:
            # camera c is visited 500*c frames after camera 0
            offsets = 500.0 * np.arange(c)
            self.transit_mean = offsets[:, None] - offsets[None, :]
        if self.transit_std is None:
            self.transit_std = np.full((c, c), 50.0) - 50.0 * np.eye(c)
        self.transit_mean = np.asarray(self.transit_mean, dtype=np.float64)
        self.transit_std = np.asarray(self.transit_std, dtype=np.float64)
        for name in ("transit_mean", "transit_std"):
            if getattr(self, name).shape != (c, c):
                raise ValueError(f"{name} must be {c}x{c}")
        if not np.allclose(self.transit_mean, -self.transit_mean.T):
            raise ValueError("transit_mean must be antisymmetric: mean[b][a] == -mean[a][b]")
        if not np.allclose(self.transit_std, self.transit_std.T) or np.any(self.transit_std < 0):
            raise ValueError("transit_std must be symmetric and non-negative")
        offsets = self.transit_mean[:, 0]
        if not np.allclose(self.transit_mean, offsets[:, None] - offsets[None, :], atol=1e-6):
            raise ValueError("transit_mean must be additive: mean[a][c] == mean[a][b] + mean[b][c]")
        self.visit_covariance()  # raises if the stds are not realizable

    @property
    def visit_offsets(self) -> np.ndarray:
        """Mean visit time of each camera relative to camera 0."""
        return self.transit_mean[:, 0] - self.transit_mean[0, 0]

    def visit_covariance(self) -> np.ndarray:
        """Covariance of per-camera visit times whose pairwise difference
        variances equal ``transit_std**2`` (double-centering)."""
        c = self.num_cameras
        sq = self.transit_std**2
        centering = np.eye(c) - 1.0 / c
        cov = -0.5 * centering @ sq @ centering
        eig = np.linalg.eigvalsh(cov)
        if eig.min() < -1e-6 * max(1.0, eig.max()):
            raise ValueError("transit_std is not realizable by any joint visit-time distribution")
        return cov


@dataclass
class CameraStyles:
    """Per-camera affine styles ``x -> R_c x + b_c`` on the first ``dim`` features."""

    rotations: np.ndarray  # (C, dim, dim)
    biases: np.ndarray  # (C, dim)

    @property
    def num_cameras(self) -> int:
        return len(self.rotations)

    def apply(self, x: np.ndarray, camera: int) -> np.ndarray:
        dim = self.biases.shape[1]
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., :dim] = x[..., :dim] @ self.rotations[camera].T + self.biases[camera]
        return out

    def transfer(self, x: np.ndarray, src: int, dst: int) -> np.ndarray:
        """Restyle features observed at camera ``src`` as if seen by ``dst``."""
        dim = self.biases.shape[1]
        out = np.array(x, dtype=np.float64, copy=True)
        canonical = (x[..., :dim] - self.biases[src]) @ self.rotations[src]
        out[..., :dim] = canonical @ self.rotations[dst].T + self.biases[dst]
        return out

    @classmethod
    def identity(cls, num_cameras: int, dim: int) -> "CameraStyles":
        return cls(np.broadcast_to(np.eye(dim), (num_cameras, dim, dim)).copy(), np.zeros((num_cameras, dim)))

    @classmethod
    def random(cls, num_cameras: int, dim: int, strength: float, rng: np.random.Generator) -> "CameraStyles":
        rots, biases = [], []
        for _ in range(num_cameras):
            g = rng.standard_normal((dim, dim))
            skew = (g - g.T) / math.sqrt(2 * dim)
            rots.append(expm(strength * skew))
            biases.append(strength * rng.standard_normal(dim))
        return cls(np.stack(rots), np.stack(biases))

    @classmethod
    def estimate(cls, d: Dataset) -> "CameraStyles":
        """Mean-shift styles fitted on unlabeled data: bias = per-camera mean
        offset from the global mean, rotation = identity."""
        raw = d.features.raw.astype(np.float64)
        mean = raw.mean(axis=0)
        dim = raw.shape[1]
        biases = np.zeros((d.num_cameras, dim))
        for c in range(d.num_cameras):
            rows = raw[d.camera_ids == c]
            if len(rows):
                biases[c] = rows.mean(axis=0) - mean
        return cls(np.broadcast_to(np.eye(dim), (d.num_cameras, dim, dim)).copy(), biases)


@dataclass
class GroundTruth:
    prototypes: np.ndarray
    twin_pairs: list[tuple[int, int]]
    transit_mean: np.ndarray
    transit_std: np.ndarray
    dwell_frames: int
    styles: CameraStyles
    start_times: np.ndarray = field(repr=False)

    def to_text(self) -> str:
        c = len(self.transit_mean)
        lines = ["# synthetic world ground truth", f"num_cameras={c}", f"dwell_frames={self.dwell_frames}"]
        for a in range(c):
            for b in range(c):
                lines.append(f"transit_mean.{a}.{b}={float(self.transit_mean[a, b])!r}")
                lines.append(f"transit_std.{a}.{b}={float(self.transit_std[a, b])!r}")
        lines.append("twin_pairs=" + ";".join(f"{p},{q}" for p, q in self.twin_pairs))
        for p, proto in enumerate(self.prototypes):
            lines.append(f"prototype.{p}=" + ",".join(repr(float(v)) for v in proto))
            lines.append(f"start_time.{p}={float(self.start_times[p])!r}")
        for cam in range(c):
            lines.append(f"style_bias.{cam}=" + ",".join(repr(float(v)) for v in self.styles.biases[cam]))
            lines.append(
                f"style_rotation.{cam}=" + ",".join(repr(float(v)) for v in self.styles.rotations[cam].ravel())
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GroundTruth":
        kv = {}
        for line in text.splitlines():
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                kv[key] = value
        c = int(kv["num_cameras"])
        mean = np.array([[float(kv[f"transit_mean.{a}.{b}"]) for b in range(c)] for a in range(c)])
        std = np.array([[float(kv[f"transit_std.{a}.{b}"]) for b in range(c)] for a in range(c)])
        twins = [tuple(int(v) for v in t.split(",")) for t in kv["twin_pairs"].split(";") if t]
        n_persons = sum(1 for k in kv if k.startswith("prototype."))
        protos = np.array([[float(v) for v in kv[f"prototype.{p}"].split(",")] for p in range(n_persons)])
        starts = np.array([float(kv[f"start_time.{p}"]) for p in range(n_persons)])
        biases = np.array([[float(v) for v in kv[f"style_bias.{cam}"].split(",")] for cam in range(c)])
        dim = biases.shape[1]
        rots = np.array(
            [np.array([float(v) for v in kv[f"style_rotation.{cam}"].split(",")]).reshape(dim, dim) for cam in range(c)]
        )
        return cls(protos, twins, mean, std, int(kv["dwell_frames"]), CameraStyles(rots, biases), starts)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        return cls.from_text(Path(path).read_text())


def generate(cfg: WorldConfig) -> tuple[Dataset, GroundTruth]:
    """Build a synthetic dataset and its ground truth; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    p_count, c, m = cfg.num_persons, cfg.num_cameras, cfg.images_per_person_per_camera
    id_dim = cfg.feature_dim - cfg.nuisance_dim

    prototypes = rng.standard_normal((p_count, id_dim))
    n_twin_pairs = int(math.floor(cfg.twin_fraction * p_count / 2))
    perm = rng.permutation(p_count)
    twin_pairs = sorted(
        (int(min(perm[2 * k], perm[2 * k + 1])), int(max(perm[2 * k], perm[2 * k + 1]))) for k in range(n_twin_pairs)
    )

    starts = rng.uniform(0.0, cfg.time_horizon, size=p_count)
    for p, q in twin_pairs:
        direction = rng.standard_normal(id_dim)
        direction /= np.linalg.norm(direction)
        prototypes[q] = prototypes[p] + 0.5 * cfg.appearance_spread * direction
        starts[q] = (starts[p] + 0.5 * cfg.time_horizon) % cfg.time_horizon

    styles = CameraStyles.random(c, id_dim, cfg.camera_style_strength, rng)

    cov = cfg.visit_covariance()
    evals, evecs = np.linalg.eigh(cov)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    visit = cfg.visit_offsets[None, :] + rng.standard_normal((p_count, c)) @ root.T
    # camera a is visited at start + visit[:, a]; mean[a][b] = E[visit_a - visit_b]

    raw = np.empty((p_count * c * m, cfg.feature_dim))
    frames = np.empty(p_count * c * m, dtype=np.int64)
    pids = np.empty(p_count * c * m, dtype=np.int64)
    cams = np.empty(p_count * c * m, dtype=np.int64)
    row = 0
    for p in range(p_count):
        for cam in range(c):
            base = starts[p] + visit[p, cam]
            dwell = rng.integers(0, cfg.dwell_frames, size=m)
            noise = cfg.appearance_spread * rng.standard_normal((m, id_dim))
            ident = styles.apply(prototypes[p][None, :] + noise, cam)
            nuis = cfg.nuisance_std * rng.standard_normal((m, cfg.nuisance_dim))
            raw[row : row + m] = np.hstack([ident, nuis])
            frames[row : row + m] = int(round(base)) + dwell
            pids[row : row + m] = p
            cams[row : row + m] = cam
            row += m
    frames -= frames.min()
    starts = starts - starts.min()

    # shuffle so sample order carries no identity information
    order = rng.permutation(len(raw))
    metas = [SampleMeta(i, int(pids[o]), int(cams[o]), int(frames[o])) for i, o in enumerate(order)]
    raw = raw[order].astype(np.float32)
    ds = Dataset(metas, FeatureStore(raw), c, "target")
    gt = GroundTruth(prototypes, twin_pairs, cfg.transit_mean.copy(), cfg.transit_std.copy(), cfg.dwell_frames, styles, starts)
    return ds, gt


def _interval_pmf(mean: float, std: float, support: np.ndarray) -> np.ndarray:
    """Probability of each integer interval when a Normal is rounded to frames."""
    if std == 0:
        return (np.round(mean) == support).astype(np.float64)
    hi = ndtr((support + 0.5 - mean) / std)
    lo = ndtr((support - 0.5 - mean) / std)
    return hi - lo


def _dwell_difference_pmf(dwell: int) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of d1 - d2 for independent uniform integer dwell offsets."""
    offsets = np.arange(-(dwell - 1), dwell)
    return offsets, (dwell - np.abs(offsets)) / dwell**2


def true_temporal_model(gt: GroundTruth, binning: BinSpec, include_dwell: bool = True) -> TemporalModel:
    """Discretize the known transit distributions onto ``binning``.

    Cross-camera pairs follow the rounded Normal transit law (optionally
    convolved with the dwell jitter), same-camera pairs the absolute dwell
    difference.  Each histogram is renormalized to sum 1 over the support.
    """
    c = len(gt.transit_mean)
    lo = int(math.ceil(-binning.max_interval))
    hi = int(math.floor(binning.max_interval))
    support = np.arange(lo, hi + 1)
    idx = binning.index(support)
    dwell = gt.dwell_frames if include_dwell else 1
    d_off, d_pmf = _dwell_difference_pmf(dwell)
    hists: dict[tuple[int, int], np.ndarray | None] = {}
    for a, b in camera_pairs(c):
        if a == b:
            pmf = np.zeros(support.size)
            pos = np.abs(d_off)
            inside = pos <= hi
            np.add.at(pmf, pos[inside] - lo, d_pmf[inside])
        else:
            # a little wider than the support so jitter can carry mass in
            pad = dwell
            wide = np.arange(lo - pad, hi + pad + 1)
            base = _interval_pmf(gt.transit_mean[a, b], gt.transit_std[a, b], wide)
            full = np.convolve(base, d_pmf, mode="same") if dwell > 1 else base
            pmf = full[pad : pad + support.size]
        h = np.zeros(binning.num_bins)
        np.add.at(h, idx, pmf)
        total = h.sum()
        hists[(a, b)] = h / total if total > 0 else None
    return TemporalModel(c, binning, hists, None)
