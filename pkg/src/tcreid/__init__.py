"""Temporal-consistency person re-identification on synthetic camera networks.

Camera-pair interval histograms, joint visual/temporal similarity, density
clustering into multi-labels, a memory-bank classifier and the losses that
train a linear embedder, plus CMC/mAP evaluation.
"""
from .clustering import NOISE, dbscan, labels_from_clusters, purity
from .data import UNKNOWN, Dataset, FeatureStore, MultiLabels, SampleMeta, load_dataset, save_dataset, split_query_gallery
from .evaluation import EvalReport, ablation_report, average_precision, evaluate, rank_query
from .memory import MemoryBank, alpha_schedule
from .objective import Embedder, LossWeights, augment, build_sac_classifier, global_loss, sac_loss, src_loss, total_loss
from .similarity import FusionParams, joint_sim, pairwise_joint, pairwise_visual, visual_sim
from .synth import GroundTruth, WorldConfig, generate, true_temporal_model
from .temporal import BinSpec, TemporalModel, estimate_histograms, smooth
from .trainer import TrainConfig, ablation_configs, batch_sampler, train

__version__ = "0.1.0"
