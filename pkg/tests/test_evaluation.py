import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcreid.data import UNKNOWN, ValidationError
from tcreid.evaluation import CMC_RANKS, EvalReport, ablation_report, average_precision, evaluate, rank_query
from tcreid.temporal import BinSpec, estimate_histograms, smooth
from helpers import make_dataset
from oracles import brute_ap, brute_ranking


def _unit(rows):
    rows = np.asarray(rows, dtype=float)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _random_case(seed, n=40, persons=8):
    rng = np.random.default_rng(seed)
    d = make_dataset(rng.integers(0, 3, n), rng.integers(0, 5000, n), rng.integers(0, persons, n), num_cameras=3)
    return d, _unit(rng.standard_normal((n, 5)))


def test_ap_hand_value():
    assert average_precision([1, 0, 1]) == pytest.approx(0.8333, abs=1e-4)
    assert average_precision([0, 0]) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=50))
def test_ap_matches_definition(rel):
    assert average_precision(rel) == pytest.approx(brute_ap(rel), abs=1e-12)


def test_perfect_ranking():
    # persons 0..3, each seen at camera 0 and camera 1 with identical features
    d = make_dataset([0, 1] * 4, [0] * 8, [0, 0, 1, 1, 2, 2, 3, 3])
    feats = np.repeat(np.eye(4), 2, axis=0)
    rep = evaluate([0, 2, 4, 6], [1, 3, 5, 7], feats, d)
    assert rep.mAP == 1.0 and all(v == 1.0 for v in rep.cmc.values())
    assert rep.num_queries == 4 and rep.skipped_queries == []


def test_same_camera_same_person_is_ignored():
    # query 0 (cam 0); sample 1 is the same person at the same camera and
    # scores highest, then a distractor, then the true cross-camera match
    d = make_dataset([0, 0, 1, 1], [0] * 4, [0, 0, 1, 0])
    feats = _unit([[1, 0], [1, 0.01], [1, 0.2], [1, 0.5]])
    rep = evaluate([0], [1, 2, 3], feats, d)
    assert rep.ap == [0.5] and rep.cmc[1] == 0.0 and rep.cmc[5] == 1.0


def test_query_without_cross_camera_match_is_skipped():
    d = make_dataset([0, 0, 1], [0] * 3, [0, 0, 1])
    rep = evaluate([0, 2], [1], _unit(np.ones((3, 2))), d)
    assert rep.skipped_queries == [0, 2] and rep.num_queries == 0 and rep.mAP == 0.0


def test_unknown_ids_rejected():
    d = make_dataset([0, 1], [0, 0], [UNKNOWN, 0])
    with pytest.raises(ValidationError):
        evaluate([0], [1], np.eye(2), d)


def test_joint_mode_requires_model():
    d, f = _random_case(0)
    with pytest.raises(ValueError, match="temporal model"):
        evaluate([0], list(range(1, 40)), f, d, mode="joint")
    with pytest.raises(ValueError, match="mode"):
        evaluate([0], list(range(1, 40)), f, d, mode="fused")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_ap_per_query_equals_brute_force(seed):
    d, f = _random_case(seed)
    query, gallery = list(range(8)), list(range(8, 40))
    rep = evaluate(query, gallery, f, d)
    expected, hits = [], []
    for q in query:
        kept = [g for g in gallery if not (d.person_ids[g] == d.person_ids[q] and d.camera_ids[g] == d.camera_ids[q])]
        order = brute_ranking([float(f[q] @ f[g]) for g in kept], kept)
        rel = [d.person_ids[g] == d.person_ids[q] for g in order]
        if any(rel):
            expected.append(brute_ap(rel))
            hits.append(rel.index(True))
    assert rep.ap == pytest.approx(expected, abs=1e-12)
    for k in CMC_RANKS:
        assert rep.cmc[k] == pytest.approx(np.mean(np.array(hits) < k) if hits else 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_cmc_monotone_and_bounded(seed):
    d, f = _random_case(seed, n=60, persons=15)
    rep = evaluate(list(range(15)), list(range(15, 60)), f, d)
    values = [rep.cmc[k] for k in CMC_RANKS]
    assert values == sorted(values)
    assert all(0 <= v <= 1 for v in values) and 0 <= rep.mAP <= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.randoms(use_true_random=False))
def test_map_invariant_to_gallery_order(seed, rnd):
    d, f = _random_case(seed)
    gallery = list(range(10, 40))
    shuffled = gallery[:]
    rnd.shuffle(shuffled)
    a = evaluate(list(range(10)), gallery, f, d)
    b = evaluate(list(range(10)), shuffled, f, d)
    assert a.mAP == b.mAP and a.cmc == b.cmc


def test_parallel_queries_match():
    d, f = _random_case(5, n=120, persons=20)
    a = evaluate(list(range(30)), list(range(30, 120)), f, d, workers=1)
    b = evaluate(list(range(30)), list(range(30, 120)), f, d, workers=4)
    assert a.ap == b.ap and a.cmc == b.cmc


def test_joint_mode_scores():
    d, f = _random_case(6)
    tm = smooth(estimate_histograms(d, d.person_ids, BinSpec()), 100)
    rep = evaluate(list(range(8)), list(range(8, 40)), f, d, tm, mode="joint")
    assert rep.mode == "joint" and 0 <= rep.mAP <= 1


def test_rank_query_cases():
    d = make_dataset([0, 1, 1, 1], [0] * 4, [0, 1, 2, 3])
    f = _unit([[1, 0], [1, 0], [1, 0], [0, 1]])
    assert rank_query(0, [3], f, d, top_k=5) == [(3, pytest.approx(0.0))]
    ranked = rank_query(0, [3, 2, 1], f, d, top_k=2)
    assert [sid for sid, _ in ranked] == [1, 2]  # tie broken by sample id


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_rank_query_matches_sort_oracle(seed):
    d, _ = _random_case(seed)
    # small integer features make dot products exact, so ties are real ties
    f = np.random.default_rng(seed).integers(-2, 3, (40, 5)).astype(float)
    gallery = list(range(1, 40))
    got = [sid for sid, _ in rank_query(0, gallery, f, d, top_k=100, exclude_junk=False)]
    assert got == brute_ranking([float(f[0] @ f[g]) for g in gallery], gallery)


def test_ablation_table():
    rep = EvalReport(0.5, {k: 0.5 + k / 100 for k in CMC_RANKS}, "visual")
    rows = [(name, rep) for name in ("Baseline", "SAC", "MTC", "JVTC", "JVTC+")]
    table = ablation_report(rows)
    lines = table.splitlines()
    assert len(lines) == 7 and lines[0].split() == ["Method", "mAP", "r1", "r5", "r10", "r20"]
    assert lines[2].split() == ["Baseline", "50.0", "51.0", "55.0", "60.0", "70.0"]
    assert len(ablation_report(rows[:1]).splitlines()) == 3
    with pytest.raises(ValueError):
        ablation_report([])
    with pytest.raises(ValueError, match="CMC"):
        ablation_report([("x", EvalReport(0.5, {}, "visual"))])


def test_report_csv():
    rep = EvalReport(0.25, {k: 1.0 for k in CMC_RANKS}, "joint", [0.25], 1, [7])
    assert rep.to_csv().splitlines() == [
        "mode,mAP,rank1,rank5,rank10,rank20,num_queries,skipped_queries",
        "joint,0.250000,1.000000,1.000000,1.000000,1.000000,1,1",
    ]
