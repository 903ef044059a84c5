import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcreid.clustering import (
    NOISE,
    core_points,
    dbscan,
    labels_from_clusters,
    load_assignment,
    load_multilabels,
    num_clusters,
    purity,
    save_assignment,
    save_multilabels,
)
from oracles import reference_dbscan


def _random_sim(n, seed, density=0.3):
    rng = np.random.default_rng(seed)
    # points on a line give chained neighborhoods with shared border points
    x = np.sort(rng.uniform(0, n * density, n))
    rng.shuffle(x)
    sim = np.exp(-np.abs(x[:, None] - x[None, :]))
    return np.triu(sim) + np.triu(sim, 1).T


def test_two_blocks():
    sim = np.full((10, 10), 0.05)
    sim[:5, :5] = sim[5:, 5:] = 0.95
    np.fill_diagonal(sim, 1.0)
    out = dbscan(sim, eps=0.3, min_pts=3)
    assert out.tolist() == [0] * 5 + [1] * 5
    assert np.array_equal(out, reference_dbscan(sim, 0.3, 3))


def test_all_dissimilar_is_noise():
    sim = np.full((6, 6), 1e-3)
    np.fill_diagonal(sim, 1.0)
    assert np.all(dbscan(sim, eps=0.5, min_pts=2) == NOISE)


def test_min_pts_one_makes_everyone_core():
    sim = np.full((4, 4), 0.0) + np.eye(4)
    assert dbscan(sim, eps=0.1, min_pts=1).tolist() == [0, 1, 2, 3]


def test_border_point_joins_first_cluster():
    # 0..3 dense, 5..8 dense, 4 touches 3 and 5 but has too few neighbors to be core
    sim = np.eye(9)
    for group in ((0, 1, 2, 3), (5, 6, 7, 8)):
        for i in group:
            for j in group:
                sim[i, j] = 1.0
    sim[4, 3] = sim[3, 4] = sim[4, 5] = sim[5, 4] = 0.9
    out = dbscan(sim, eps=0.2, min_pts=4)
    assert out.tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1]
    rev = dbscan(sim, eps=0.2, min_pts=4, reverse=True)
    assert rev[4] == rev[5]  # descending visits reach the upper cluster first


def test_oracle_on_random_n40():
    for seed in range(20):
        sim = _random_sim(40, seed)
        for eps, min_pts in ((0.3, 3), (0.6, 4), (0.1, 2)):
            assert np.array_equal(dbscan(sim, eps, min_pts), reference_dbscan(sim, eps, min_pts))


def test_non_square_rejected():
    with pytest.raises(ValueError):
        dbscan(np.ones((2, 3)))
    with pytest.raises(ValueError):
        dbscan(np.ones((2, 2)), min_pts=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**31), st.floats(0.05, 0.9), st.integers(1, 6), st.floats(0.05, 1.0))
def test_reverse_schedule_keeps_core_partition(n, seed, eps, min_pts, density):
    sim = _random_sim(n, seed, density)
    fwd = dbscan(sim, eps, min_pts)
    rev = dbscan(sim, eps, min_pts, reverse=True)
    core = core_points(sim, eps, min_pts)
    # same core points, same grouping of them (ids may differ)
    pairs = {(int(a), int(b)) for a, b in zip(fwd[core], rev[core])}
    assert len({a for a, _ in pairs}) == len(pairs) == len({b for _, b in pairs})
    assert np.array_equal(fwd == NOISE, rev == NOISE)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**31), st.floats(0.05, 0.9), st.integers(1, 6))
def test_clusters_contiguous_and_labels_valid(n, seed, eps, min_pts):
    assign = dbscan(_random_sim(n, seed), eps, min_pts)
    ids = sorted(set(assign[assign != NOISE].tolist()))
    assert ids == list(range(len(ids)))
    m = labels_from_clusters(assign)
    m.validate()
    dense = m.dense()
    assert np.array_equal(dense, dense.T) and np.all(np.diag(dense) == 1)


def test_labels_from_clusters_examples():
    m = labels_from_clusters([0, 0, 1])
    assert [p.tolist() for p in m.positives] == [[0, 1], [0, 1], [2]]
    m = labels_from_clusters([NOISE] * 3)
    assert [p.tolist() for p in m.positives] == [[0], [1], [2]]


def test_purity_examples(caplog):
    assert purity([0, 0, 1, 1], [5, 5, 6, 6]) == 1.0
    assert purity([0, 0, 0, 0], [1, 1, 1, 2]) == 0.75
    assert purity([0, 0, 1, 1, NOISE], [1, 1, 2, 2, 3]) == 1.0
    assert purity([NOISE, NOISE], [1, 2]) == 0.0
    assert "every point is noise" in caplog.text
    assert num_clusters([0, 1, NOISE, 1]) == 2


def test_assignment_and_multilabel_files(tmp_path):
    assign = np.array([1, 0, NOISE, 1, 0])
    save_assignment(tmp_path / "a.csv", assign)
    assert (tmp_path / "a.csv").read_text().splitlines()[:2] == ["sample_id,cluster_id", "0,1"]
    assert np.array_equal(load_assignment(tmp_path / "a.csv"), assign)
    m = labels_from_clusters(assign)
    save_multilabels(tmp_path / "m.txt", m)
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == "0: 0 3"
    back = load_multilabels(tmp_path / "m.txt")
    assert [p.tolist() for p in back.positives] == [p.tolist() for p in m.positives]
