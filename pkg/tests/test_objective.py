import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcreid.objective import (
    Embedder,
    LossWeights,
    NonFiniteLossError,
    augment,
    build_sac_classifier,
    cosine_xent,
    global_loss,
    sac_loss,
    softmax,
    src_loss,
    total_loss,
)
from tcreid.synth import CameraStyles
from oracles import central_difference, rel_error


def _sac_instance(seed, n_t=5, k=2, d_in=12, d=6):
    rng = np.random.default_rng(seed)
    emb = Embedder.random(d, d_in, seed)
    x = rng.standard_normal((n_t * (k + 1), d_in))
    V = build_sac_classifier(emb.forward(x), n_t, k)
    return emb, x, V


def test_embedder_outputs_unit_rows():
    emb = Embedder.random(4, 9, 3)
    f = emb(np.random.default_rng(0).standard_normal((7, 9)))
    assert np.allclose(np.linalg.norm(f, axis=1), 1, atol=1e-12)


def test_embedder_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    emb = Embedder.random(3, 5, 1)
    x = rng.standard_normal((4, 5))
    c = rng.standard_normal((4, 3))
    loss = lambda w: float(np.sum(c * Embedder(w).forward(x)))
    assert rel_error(emb.backward(x, c), central_difference(loss, emb.weight)) < 1e-6


def test_sac_closed_form():
    emb = Embedder(np.eye(2))
    loss, _ = sac_loss(emb, np.eye(2), np.eye(2), 0.1)
    assert loss == pytest.approx(math.log1p(math.exp(-10)), rel=1e-9)
    assert loss == pytest.approx(4.54e-5, rel=1e-3)


def test_sac_uniform_scores():
    emb = Embedder.random(3, 4, 0)
    V = np.tile([[0.0, 0.0, 1.0]], (4, 1))
    loss, _ = sac_loss(emb, np.random.default_rng(0).standard_normal((8, 4)), V, 0.1)
    assert loss == pytest.approx(math.log(4), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_sac_gradient_spec_shape(seed):
    emb, x, V = _sac_instance(seed, n_t=8, k=2, d_in=12, d=6)
    loss = lambda w: sac_loss(Embedder(w), x, V, 0.1)[0]
    assert rel_error(sac_loss(emb, x, V, 0.1)[1], central_difference(loss, emb.weight)) < 1e-4


def test_sac_batch_shape_checked():
    emb, x, V = _sac_instance(0)
    with pytest.raises(ValueError):
        sac_loss(emb, x[:-1], V, 0.1)
    with pytest.raises(ValueError):
        build_sac_classifier(emb.forward(x), 4, 2)


def test_sac_classifier_cases():
    emb = Embedder.random(4, 6, 2)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 6))
    assert np.allclose(build_sac_classifier(emb.forward(x), 3, 0), emb.forward(x))
    twice = np.vstack([x, x, x])
    assert np.allclose(build_sac_classifier(emb.forward(twice), 3, 2), emb.forward(x))
    x4 = rng.standard_normal((12, 6))
    f = emb.forward(x4)
    hand = np.array([(f[i] + f[3 + i] + f[6 + i] + f[9 + i]) / 4 for i in range(3)])
    hand /= np.linalg.norm(hand, axis=1, keepdims=True)
    assert np.allclose(build_sac_classifier(f, 3, 3), hand, atol=1e-14)


def test_global_closed_form():
    bank = np.eye(3)
    emb = Embedder(np.eye(3))
    loss, _ = global_loss(emb, np.eye(3)[[0]], bank, [[0]], 0.05)
    assert loss == pytest.approx(math.log1p(2 * math.exp(-20)), rel=1e-6)
    assert loss == pytest.approx(4.12e-9, rel=1e-2)


def test_global_uniform_scores_ignore_labels():
    bank = np.tile([[0.0, 1.0]], (5, 1))
    emb = Embedder(np.array([[1.0, 0.0], [0.0, 1.0]]))
    for pos in ([0], [1, 2, 3], [0, 1, 2, 3, 4]):
        loss, _ = global_loss(emb, np.array([[2.0, 1.0]]), bank, [pos], 0.05)
        assert loss == pytest.approx(math.log(5), rel=1e-12)


def test_global_rejects_empty_positive_set():
    with pytest.raises(ValueError, match="empty positive"):
        global_loss(Embedder(np.eye(2)), np.eye(2), np.eye(2), [[0], []], 0.05)


def test_src_closed_form_and_range_check():
    emb = Embedder(np.eye(3))
    loss, _, _ = src_loss(emb, np.eye(3)[[1]], [1], np.eye(3), beta=0.1)
    assert loss == pytest.approx(math.log1p(2 * math.exp(-10)), rel=1e-9)
    assert loss == pytest.approx(9.1e-5, rel=1e-2)
    loss, _, _ = src_loss(emb, np.eye(3)[[1]], [2], np.tile([[1.0, 0, 0]], (4, 1)))
    assert loss == pytest.approx(math.log(4), rel=1e-12)
    with pytest.raises(ValueError, match="class index"):
        src_loss(emb, np.eye(3)[[1]], [3], np.eye(3))


def test_total_loss():
    assert total_loss(1.0, 2.0, 3.0) == pytest.approx(3.6)
    assert total_loss(None, 2.0, 3.0) == pytest.approx(2.0 + 0.2 * 3.0)
    assert total_loss(1.5, 2.0, 3.0, LossWeights(w1=0, w2=0)) == 1.5
    with pytest.raises(ValueError):
        LossWeights(beta1=0)


def test_non_finite_loss_raises():
    f = np.array([[np.nan, 0.0]])
    with pytest.raises(NonFiniteLossError):
        cosine_xent(f, np.eye(2), np.eye(2)[[0]], 0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 20), st.floats(1e-3, 100))
def test_softmax_rows_sum_to_one(seed, width, scale):
    logits = np.random.default_rng(seed).standard_normal((7, width)) * scale
    p = softmax(logits)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-6) and np.all(p >= 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_losses_non_negative(seed):
    emb, x, V = _sac_instance(seed % 1000, n_t=3, k=1, d_in=5, d=3)
    assert sac_loss(emb, x, V, 0.1)[0] >= 0
    rng = np.random.default_rng(seed)
    bank = rng.standard_normal((9, 3))
    bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    assert global_loss(emb, x[:2], bank, [[0, 4], [1]], 0.05)[0] >= 0
    assert src_loss(emb, x[:4], [0, 1, 1, 0], rng.standard_normal((2, 3)))[0] >= 0


def _margin(emb, x, V, n_t):
    p = softmax(emb.forward(x) @ V.T / 0.1)
    labels = np.tile(np.arange(n_t), len(x) // n_t)
    correct = p[np.arange(len(x)), labels]
    p[np.arange(len(x)), labels] = -1
    return float(np.mean(correct - p.max(axis=1)))


def test_sac_descent_sanity():
    emb, x, V = _sac_instance(4, n_t=6, k=2, d_in=10, d=4)
    losses = []
    start = _margin(emb, x, V, 6)
    for _ in range(50):
        loss, g = sac_loss(emb, x, V, 0.1)
        losses.append(loss)
        emb.weight -= 0.05 * g
    assert losses[-1] < losses[0]
    assert _margin(emb, x, V, 6) > start


def test_augment_cases():
    raw = np.arange(6, dtype=float)
    assert augment(raw, 0, 0, 0.5, 1).shape == (0, 6)
    same = augment(raw, 1, 3, 0.0, 1, CameraStyles.identity(3, 6))
    assert np.array_equal(same, np.tile(raw, (3, 1)))
    out = augment(raw, 1, 3, 0.1, 1, CameraStyles.random(4, 6, 0.5, np.random.default_rng(0)))
    assert len({r.tobytes() for r in out}) == 3
    assert np.array_equal(out, augment(raw, 1, 3, 0.1, 1, CameraStyles.random(4, 6, 0.5, np.random.default_rng(0))))
    # three distinct target cameras, each restyling at most bounded away
    assert np.all(np.linalg.norm(out - raw, axis=1) < 3 * np.linalg.norm(raw) + 1.0)
    with pytest.raises(ValueError):
        augment(raw, 0, -1, 0.1, 0)
