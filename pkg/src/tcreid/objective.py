"""Losses, their analytic gradients, the linear embedder and feature augmentation.

All classifiers here are cosine classifiers: both the embedded features and
the classifier rows have unit norm, and scores are divided by a temperature
before the softmax.  The batch classifier ``V`` and the memory bank are
constants for differentiation; gradients flow only through the embedder.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import read_matrix, write_matrix
from .synth import CameraStyles


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 0.2
    beta1: float = 0.1
    beta2: float = 0.05

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("temperatures must be > 0")


class Embedder:
    """``f(x) = W x / |W x|`` with ``W`` of shape (d, D_in)."""

    def __init__(self, weight: np.ndarray):
        self.weight = np.array(weight, dtype=np.float64)

    @classmethod
    def random(cls, out_dim: int, in_dim: int, seed: int = 0) -> "Embedder":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim))

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=np.float64)) @ self.weight.T

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = self.pre_activation(x)
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    __call__ = forward

    def backward(self, x: np.ndarray, grad_f: np.ndarray) -> np.ndarray:
        """Weight gradient given the loss gradient w.r.t. the unit outputs."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = x @ self.weight.T
        norm = np.linalg.norm(z, axis=1, keepdims=True)
        f = z / norm
        grad_z = (grad_f - f * np.sum(f * grad_f, axis=1, keepdims=True)) / norm
        return grad_z.T @ x

    def save(self, path) -> None:
        write_matrix(path, self.weight)

    @classmethod
    def load(cls, path) -> "Embedder":
        return cls(read_matrix(path).astype(np.float64))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def cosine_xent(feats: np.ndarray, classifier: np.ndarray, target: np.ndarray, beta: float):
    """Mean cross-entropy of ``softmax(feats @ classifier.T / beta)`` against
    target distributions (rows summing to 1).

    Returns ``(loss, grad_feats, grad_scores_classifier, probs)`` where
    ``grad_scores_classifier`` is the gradient w.r.t. the (already
    normalized) classifier rows.
    """
    logits = feats @ classifier.T / beta
    logp = _log_softmax(logits)
    n = len(feats)
    loss = float(-np.sum(target * logp) / n)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"cross-entropy is {loss} (batch of {n}, beta={beta})")
    probs = np.exp(logp)
    delta = (probs - target) / (beta * n)
    return loss, delta @ classifier, delta.T @ feats, probs


def build_sac_classifier(features: np.ndarray, n_originals: int, k: int) -> np.ndarray:
    """Per-sample classifier rows: the normalized mean of each original's
    embedding and its ``k`` augmented embeddings.

    ``features`` is laid out originals first, then augmentation round 1 for
    every original, then round 2, and so on.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[0] != n_originals * (k + 1):
        raise ValueError(f"expected {n_originals * (k + 1)} feature rows, got {feats.shape[0]}")
    mean = feats.reshape(k + 1, n_originals, -1).mean(axis=0)
    return _normalize_rows(mean)


def sac_targets(n_originals: int, k: int) -> np.ndarray:
    return np.tile(np.arange(n_originals), k + 1)


def sac_loss(emb: Embedder, x: np.ndarray, V: np.ndarray, beta1: float = 0.1, n_originals: int | None = None):
    """Local loss over an augmented batch.

    ``x`` holds the raw inputs in the :func:`build_sac_classifier` layout;
    every row's label is the index of its original.  Returns
    ``(loss, grad_weight)``.
    """
    n_t = len(V) if n_originals is None else n_originals
    x = np.asarray(x, dtype=np.float64)
    if len(x) % n_t:
        raise ValueError(f"batch of {len(x)} rows is not a multiple of {n_t} originals")
    k = len(x) // n_t - 1
    feats = emb.forward(x)
    target = np.eye(n_t)[sac_targets(n_t, k)]
    loss, grad_f, _, _ = cosine_xent(feats, V, target, beta1)
    return loss, emb.backward(x, grad_f)


def global_loss(emb: Embedder, x: np.ndarray, bank_slots: np.ndarray, positives, beta2: float = 0.05):
    """Multi-label loss of a batch against the memory bank.

    ``positives[r]`` lists the bank indices that share a label with row ``r``
    of ``x``.  The loss averages over the batch rows.  Returns
    ``(loss, grad_weight)``.
    """
    x = np.asarray(x, dtype=np.float64)
    bank_slots = np.asarray(bank_slots, dtype=np.float64)
    target = np.zeros((len(x), len(bank_slots)))
    for r, pos in enumerate(positives):
        pos = np.asarray(pos, dtype=np.int64)
        if pos.size == 0:
            raise ValueError(f"row {r} has an empty positive set")
        target[r, pos] = 1.0 / pos.size
    feats = emb.forward(x)
    loss, grad_f, _, _ = cosine_xent(feats, bank_slots, target, beta2)
    return loss, emb.backward(x, grad_f)


def src_loss(emb: Embedder, x: np.ndarray, labels, classifier: np.ndarray, beta: float = 1.0):
    """Source-domain cross-entropy with a learnable cosine classifier.

    Returns ``(loss, grad_weight, grad_classifier)``.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classifier = np.asarray(classifier, dtype=np.float64)
    n_classes = len(classifier)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"class index outside [0, {n_classes})")
    norms = np.linalg.norm(classifier, axis=1, keepdims=True)
    rows = classifier / norms
    feats = emb.forward(x)
    loss, grad_f, grad_rows, _ = cosine_xent(feats, rows, np.eye(n_classes)[labels], beta)
    grad_cls = (grad_rows - rows * np.sum(rows * grad_rows, axis=1, keepdims=True)) / norms
    return loss, emb.backward(x, grad_f), grad_cls


def total_loss(src: float | None, local: float | None, glob: float | None, weights: LossWeights = LossWeights()) -> float:
    """``src + w1 * local + w2 * global``; missing parts count as zero."""
    return (src or 0.0) + weights.w1 * (local or 0.0) + weights.w2 * (glob or 0.0)


def augment(
    raw: np.ndarray,
    camera_id: int,
    k: int,
    strength: float,
    seed: int,
    styles: CameraStyles | None = None,
) -> np.ndarray:
    """``k`` restyled, noised copies of one raw feature vector.

    Each copy is transferred to a randomly chosen other camera (distinct
    cameras while there are enough of them) and perturbed with Gaussian noise
    of standard deviation ``strength``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return np.empty((0, raw.size))
    rng = np.random.default_rng(seed)
    if styles is None or styles.num_cameras < 2:
        targets = np.full(k, camera_id)
    else:
        others = np.array([c for c in range(styles.num_cameras) if c != camera_id])
        targets = rng.choice(others, size=k, replace=k > others.size)
    out = np.empty((k, raw.size))
    for r, dst in enumerate(targets):
        styled = raw if styles is None else styles.transfer(raw, camera_id, int(dst))
        out[r] = styled + strength * rng.standard_normal(raw.size)
    return out
