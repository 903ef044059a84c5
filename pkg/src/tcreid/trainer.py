"""Training schedule: batch-local classification, clustering-based multi-labels,
memory-bank updates and the ablation switches between them."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import dbscan, labels_from_clusters, num_clusters, purity
from .data import Dataset, MultiLabels
from .memory import MemoryBank, alpha_schedule
from .objective import Embedder, LossWeights, NonFiniteLossError, augment, build_sac_classifier, global_loss, sac_loss, src_loss
from .similarity import FusionParams, pairwise_joint, pairwise_visual
from .synth import CameraStyles
from .temporal import BinSpec, TemporalModel, estimate_histograms, smooth

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, iteration: int, what: str):
        super().__init__(f"non-finite {what} at epoch {epoch}, iteration {iteration}")
        self.epoch = epoch
        self.iteration = iteration


@dataclass
class TrainConfig:
    total_epochs: int = 100
    lr: float = 0.01
    lr_decay_epoch: int = 40
    lr_decay: float = 0.1
    batch_size: int = 32
    k: int = 3
    augment_strength: float = 0.1
    iterations_per_epoch: int | None = None
    label_refresh_period: int = 5
    global_loss_start_epoch: int = 10
    joint_similarity_start_epoch: int = 30
    # loss weights and temperatures
    w1: float = 1.0
    w2: float = 0.2
    beta1: float = 0.1
    beta2: float = 0.05
    src_beta: float = 1.0
    # joint similarity
    lambda0: float = 1.0
    lambda1: float = 2.0
    gamma0: float = 5.0
    gamma1: float = 5.0
    # clustering; eps applies to visual similarity, eps_joint to joint similarity
    eps: float = 0.6
    eps_joint: float = 0.6
    min_pts: int = 4
    # temporal model
    bin_width: float = 100.0
    max_interval: float = 3000.0
    smoothing_sigma: float | None = None
    max_normalize: bool = True
    intra_camera: bool = True
    # ablation switches
    use_sac: bool = True
    use_mtc: bool = True
    use_temporal_in_cluster: bool = True
    use_src: bool = False
    embed_dim: int = 16
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        for name in ("global_loss_start_epoch", "joint_similarity_start_epoch", "lr_decay_epoch"):
            if not 0 <= getattr(self, name) <= self.total_epochs:
                raise ValueError(f"{name} must lie in [0, total_epochs]")
        if self.label_refresh_period < 1 or self.batch_size < 1 or self.k < 0:
            raise ValueError("label_refresh_period and batch_size must be >= 1, k >= 0")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise ValueError("iterations_per_epoch must be >= 1")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w1, self.w2, self.beta1, self.beta2)

    @property
    def fusion(self) -> FusionParams:
        return FusionParams(self.lambda0, self.lambda1, self.gamma0, self.gamma1)

    @property
    def binning(self) -> BinSpec:
        return BinSpec(self.bin_width, self.max_interval)

    @property
    def sigma(self) -> float:
        return self.bin_width if self.smoothing_sigma is None else self.smoothing_sigma

    def scaled(self, total_epochs: int) -> "TrainConfig":
        """Same phase ratios on a shorter run: every epoch constant is scaled by
        ``total_epochs / self.total_epochs`` and rounded, with a floor of 1."""
        ratio = total_epochs / self.total_epochs
        scale = lambda v: max(1, int(round(v * ratio)))
        return dataclasses.replace(
            self,
            total_epochs=total_epochs,
            lr_decay_epoch=min(total_epochs, scale(self.lr_decay_epoch)),
            label_refresh_period=scale(self.label_refresh_period),
            global_loss_start_epoch=min(total_epochs, scale(self.global_loss_start_epoch)),
            joint_similarity_start_epoch=min(total_epochs, scale(self.joint_similarity_start_epoch)),
        )


def ablation_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    """Training variants matching the component ablation.

    ``JVTC+`` shares the ``JVTC`` training run; it differs only in using the
    joint similarity at retrieval time.
    """
    rep = dataclasses.replace
    return {
        "Baseline": rep(base, use_sac=False, use_mtc=True, use_temporal_in_cluster=False),
        "SAC": rep(base, use_sac=True, use_mtc=False, use_temporal_in_cluster=False),
        "MTC": rep(base, use_sac=False, use_mtc=True, use_temporal_in_cluster=True),
        "JVTC": rep(base, use_sac=True, use_mtc=True, use_temporal_in_cluster=True),
    }


@dataclass
class EpochLog:
    epoch: int
    l_src: float | None
    l_local: float | None
    l_global: float | None
    purity: float | None
    num_clusters: int | None
    alpha: float
    refreshed: bool = False


@dataclass
class TrainResult:
    embedder: Embedder
    bank: MemoryBank
    log: list[EpochLog]
    assignment: np.ndarray | None = None
    labels: MultiLabels | None = None
    temporal_model: TemporalModel | None = None
    final_purity: float | None = None
    source_classifier: np.ndarray | None = field(default=None, repr=False)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "L_src", "L_local", "L_global", "purity", "num_clusters", "alpha"])
        fmt = lambda v: "" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))
        for row in self.log:
            w.writerow([row.epoch, fmt(row.l_src), fmt(row.l_local), fmt(row.l_global),
                        fmt(row.purity), fmt(row.num_clusters), fmt(row.alpha)])
        return buf.getvalue()


def batch_sampler(n_total: int, n_t: int, seed: int, epoch: int, iteration: int) -> np.ndarray:
    """``n_t`` distinct indices, a pure function of (seed, epoch, iteration)."""
    if n_t > n_total:
        raise ValueError(f"batch of {n_t} exceeds dataset size {n_total}")
    rng = np.random.default_rng([seed, epoch, iteration])
    return rng.choice(n_total, size=n_t, replace=False)


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class _Clusterer:
    """Label refresh: cluster the bank, rebuild multi-labels, re-estimate
    the temporal model from the new pseudo labels."""

    def __init__(self, target: Dataset, cfg: TrainConfig):
        self.target = target
        self.cfg = cfg
        self.tm: TemporalModel | None = None
        self.assign: np.ndarray | None = None
        self.labels: MultiLabels | None = None
        self.known = not target.has_unknown_ids

    def refresh(self, bank: MemoryBank, joint: bool) -> tuple[float | None, int]:
        cfg = self.cfg
        if joint and self.tm is not None:
            sim = pairwise_joint(bank, self.target.metas, self.tm, cfg.fusion, workers=cfg.workers)
            eps = cfg.eps_joint
        else:
            sim = pairwise_visual(bank, workers=cfg.workers)
            eps = cfg.eps
        self.assign = dbscan(sim, eps, cfg.min_pts)
        self.labels = labels_from_clusters(self.assign)
        if cfg.use_temporal_in_cluster:
            raw = estimate_histograms(self.target, self.assign, cfg.binning, intra_camera=cfg.intra_camera)
            raw.max_normalize = cfg.max_normalize
            self.tm = smooth(raw, cfg.sigma)
        pur = purity(self.assign, self.target.person_ids) if self.known else None
        return pur, num_clusters(self.assign)


def train(
    target: Dataset,
    cfg: TrainConfig,
    source: Dataset | None = None,
    styles: CameraStyles | None = None,
) -> TrainResult:
    """Run the full schedule; deterministic for a given ``cfg.seed``."""
    if cfg.use_src and (source is None or source.has_unknown_ids):
        raise ValueError("use_src needs a source dataset with known person ids")
    raw = target.features.raw.astype(np.float64)
    n = len(target)
    n_t = min(cfg.batch_size, n)
    iters = cfg.iterations_per_epoch or math.ceil(n / n_t)
    styles = styles if styles is not None else CameraStyles.estimate(target)

    emb = Embedder.random(cfg.embed_dim, target.features.dim, seed=_sub_seed(cfg.seed, 1))
    bank = MemoryBank.init(emb.forward(raw))
    clusterer = _Clusterer(target, cfg)

    src_cls = src_raw = src_labels = None
    if cfg.use_src:
        src_raw = source.features.raw.astype(np.float64)
        classes, src_labels = np.unique(source.person_ids, return_inverse=True)
        src_cls = np.random.default_rng(_sub_seed(cfg.seed, 2)).standard_normal((classes.size, cfg.embed_dim))

    log: list[EpochLog] = []
    for epoch in range(cfg.total_epochs):
        alpha = alpha_schedule(epoch, cfg.total_epochs)
        bank.epoch_alpha = alpha
        lr = cfg.lr * (cfg.lr_decay if epoch >= cfg.lr_decay_epoch else 1.0)
        pur = n_clusters = None
        refreshed = False
        if cfg.use_mtc and epoch % cfg.label_refresh_period == 0:
            drift = float(np.mean(np.sum(emb.forward(raw) * bank.slots, axis=1)))
            joint = cfg.use_temporal_in_cluster and epoch >= cfg.joint_similarity_start_epoch
            pur, n_clusters = clusterer.refresh(bank, joint)
            refreshed = True
            logger.info(
                "epoch %d: refreshed labels (%s), %d clusters, purity %s, bank/feature agreement %.3f",
                epoch, "joint" if joint and clusterer.tm is not None else "visual", n_clusters,
                "n/a" if pur is None else f"{pur:.3f}", drift,
            )
        elif log:
            pur, n_clusters = log[-1].purity, log[-1].num_clusters

        sums = {"src": 0.0, "local": 0.0, "global": 0.0}
        use_global = cfg.use_mtc and epoch >= cfg.global_loss_start_epoch and clusterer.labels is not None
        for it in range(iters):
            idx = batch_sampler(n, n_t, cfg.seed, epoch, it)
            x = raw[idx]
            grad = np.zeros_like(emb.weight)
            try:
                if cfg.use_sac:
                    copies = [
                        augment(raw[i], int(target.camera_ids[i]), cfg.k, cfg.augment_strength,
                                _sub_seed(cfg.seed, epoch, it, pos), styles)
                        for pos, i in enumerate(idx)
                    ]
                    rounds = [np.stack([c[r] for c in copies]) for r in range(cfg.k)]
                    x_all = np.vstack([x] + rounds)
                    V = build_sac_classifier(emb.forward(x_all), n_t, cfg.k)
                    l_local, g = sac_loss(emb, x_all, V, cfg.beta1)
                    grad += cfg.w1 * g
                    sums["local"] += l_local
                bank_feats = emb.forward(x)
                if use_global:
                    l_glob, g = global_loss(
                        emb, x, bank.slots, [clusterer.labels.positives[i] for i in idx], cfg.beta2
                    )
                    grad += cfg.w2 * g
                    sums["global"] += l_glob
                if cfg.use_src:
                    sidx = batch_sampler(len(src_raw), min(n_t, len(src_raw)), _sub_seed(cfg.seed, 3), epoch, it)
                    l_src, g, g_cls = src_loss(emb, src_raw[sidx], src_labels[sidx], src_cls, cfg.src_beta)
                    grad += g
                    sums["src"] += l_src
                    if not np.all(np.isfinite(g_cls)):
                        raise TrainingDiverged(epoch, it, "source classifier gradient")
                    src_cls -= lr * g_cls
            except NonFiniteLossError as exc:
                raise TrainingDiverged(epoch, it, "loss") from exc
            if not (np.all(np.isfinite(grad)) and all(np.isfinite(v) for v in sums.values())):
                raise TrainingDiverged(epoch, it, "loss or gradient")
            emb.weight -= lr * grad
            bank.update_many(idx, bank_feats, alpha)

        log.append(EpochLog(
            epoch,
            sums["src"] / iters if cfg.use_src else None,
            sums["local"] / iters if cfg.use_sac else None,
            sums["global"] / iters if use_global else (0.0 if cfg.use_mtc else None),
            pur, n_clusters, alpha, refreshed,
        ))
        logger.info("epoch %d: %s", epoch, log[-1])

    final_purity = None
    if cfg.use_mtc:
        joint = cfg.use_temporal_in_cluster and cfg.total_epochs >= cfg.joint_similarity_start_epoch
        final_purity, n_clusters = clusterer.refresh(bank, joint)
        log.append(EpochLog(cfg.total_epochs, None, None, None, final_purity, n_clusters,
                            alpha_schedule(cfg.total_epochs, cfg.total_epochs), True))
    return TrainResult(emb, bank, log, clusterer.assign, clusterer.labels, clusterer.tm, final_purity, src_cls)
