import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import distance as ssd

from fairleak.attack import (METRICS, AttackError, attack_auc, cluster_attack, pair_distance,
                             pair_distances, risk, risk_from_distances, run_attack,
                             sample_pairs)
from fairleak.graph import SbmParams, generate_sbm

from conftest import make_graph, path_graph


def brute_auc(d, labels):
    pos, neg = d[labels == 1], d[labels == 0]
    wins = sum((p < q) + 0.5 * (p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


# --------------------------------------------------------------------- pairs

def test_path_exhaustion():
    s = sample_pairs(path_graph(), seed=0, max_edges=10)
    assert s.positives.tolist() == [[0, 1], [1, 2]]
    assert s.negatives.tolist() == [[0, 2]]
    assert s.exhausted


def test_empty_graph_rejected():
    with pytest.raises(AttackError):
        sample_pairs(make_graph(5, []), seed=0)


def test_balanced_sample_on_sbm():
    g = generate_sbm(SbmParams(500, 0.05, 0.01), seed=0)
    s = sample_pairs(g, seed=1)
    assert len(s.positives) == len(s.negatives) == g.num_edges
    a = g.adjacency
    assert all(a[i, j] == 0 for i, j in s.negatives)
    assert len({tuple(p) for p in s.negatives.tolist()}) == len(s.negatives)
    assert not s.exhausted


def test_max_edges_subsamples():
    g = generate_sbm(SbmParams(200, 0.1, 0.02), seed=0)
    s = sample_pairs(g, seed=0, max_edges=50)
    assert len(s.positives) == len(s.negatives) == 50


# ----------------------------------------------------------------- distances

def test_identical_rows_zero_for_every_metric():
    y = np.array([0.2, 0.3, 0.5])
    for m in METRICS:
        assert pair_distance(y, y, m) == 0.0


def test_orthogonal_one_hot_hand_values():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    want = {"cosine": 1, "euclidean": math.sqrt(2), "cityblock": 2, "chebyshev": 1,
            "sqeuclidean": 2, "braycurtis": 1, "canberra": 2}
    for m, v in want.items():
        assert pair_distance(a, b, m) == pytest.approx(v)


def test_correlation_constant_row_flag():
    y = np.full((1, 3), 1 / 3)
    d, flag = pair_distances(y, y, "correlation")
    assert d[0] == 0.0 and flag[0]
    d, flag = pair_distances(y, np.array([[0.2, 0.3, 0.5]]), "correlation")
    assert d[0] == 1.0 and flag[0]


def test_unknown_metric():
    with pytest.raises(ValueError):
        pair_distance([1.0], [0.0], "hamming")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@given(st.data())
def test_distances_match_scipy(data):
    k = data.draw(st.integers(2, 6))
    a = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
    b = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
    for m in METRICS:
        want = getattr(ssd, m)(a, b)
        if m in ("cosine", "correlation") and not np.isfinite(want):
            continue
        assert pair_distance(a, b, m) == pytest.approx(max(want, 0.0), rel=1e-9, abs=1e-12)


# ----------------------------------------------------------------------- AUC

def test_auc_hand_cases():
    d = np.array([0.1, 0.2, 0.3, 0.4])
    assert attack_auc(d, np.array([1, 1, 0, 0])) == 1.0
    assert attack_auc(d, np.array([1, 0, 1, 0])) == 0.75


def test_auc_needs_both_classes():
    with pytest.raises(AttackError):
        attack_auc([0.1, 0.2], [1, 1])


@given(st.integers(0, 2**31), st.integers(2, 200))
def test_auc_matches_pair_counting(seed, n):
    rng = np.random.default_rng(seed)
    d = np.round(rng.random(n), 2)  # ties on purpose
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    assert attack_auc(d, labels) == pytest.approx(brute_auc(d, labels), abs=1e-12)


def test_auc_random_labels_near_half():
    rng = np.random.default_rng(0)
    aucs = [attack_auc(rng.random(400), rng.integers(0, 2, 400)) for _ in range(50)]
    assert abs(np.mean(aucs) - 0.5) < 0.02


# ------------------------------------------------------------------- cluster

def test_cluster_split():
    assert cluster_attack([0.01, 0.02, 0.9, 0.95]).labels.tolist() == [1, 1, 0, 0]


def test_cluster_identical_values():
    res = cluster_attack([0.5, 0.5])
    assert res.labels.tolist() == [1, 1] and res.degenerate


def test_cluster_outlier():
    d = [0.1, 0.11, 0.12, 0.13, 5.0]
    assert cluster_attack(d).labels.tolist() == [1, 1, 1, 1, 0]


# ---------------------------------------------------------------------- risk

def test_risk_identical_distributions():
    f, _ = risk_from_distances([0.1, 0.5, 0.9], [0.1, 0.5, 0.9])
    assert f == 0.0


def test_risk_zero_variance_flagged():
    f, norm = risk_from_distances(np.ones(4), np.full(4, 0.2))
    assert f == pytest.approx(0.8) and math.isinf(norm)


def test_risk_hand_variance():
    f, norm = risk_from_distances([0.8, 1.2], [0.1, 0.3])
    assert f == pytest.approx(0.8)
    assert norm == pytest.approx(32.0)


def test_run_attack_report(sbm20):
    s = sample_pairs(sbm20, seed=0)
    y = np.random.default_rng(0).dirichlet(np.ones(2), 20)
    rep = run_attack(s, y)
    assert set(rep.per_distance) == set(METRICS)
    assert rep.mean_auc == pytest.approx(np.mean([r.auc for r in rep.per_distance.values()]))
    assert rep.f_risk == pytest.approx(risk(s, y).f_risk)
    assert rep.to_json()["risk_metric"] == "sqeuclidean"
