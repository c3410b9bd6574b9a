import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fairleak.graph import (INFINITE_HOP, DatasetError, Graph, SbmParams, adjacency_from_edges,
                            generate_sbm, hop_distance, hop_matrix, jaccard_similarity,
                            load_dataset, normalized_adjacency, sample_absent_ranks,
                            save_dataset, theoretical_ratio, triu_rank, triu_unrank,
                            two_hop_ratio)

from conftest import make_graph, path_graph


def dense_jaccard(adj):
    n = adj.shape[0]
    nb = [set(np.flatnonzero(adj[i])) | {i} for i in range(n)]
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                s[i, j] = len(nb[i] & nb[j]) / len(nb[i] | nb[j])
    return s


# ------------------------------------------------------------------ dataset

def test_load_path_dataset(tmp_path):
    save_dataset(path_graph(), tmp_path)
    g = load_dataset(tmp_path)
    assert g.degrees().tolist() == [1, 2, 1]


def test_reversed_duplicate_edge_collapses(tmp_path):
    save_dataset(make_graph(2, []), tmp_path)
    (tmp_path / "edges.tsv").write_text("1\t0\n0\t1\n")
    g = load_dataset(tmp_path)
    assert g.num_edges == 1
    assert g.edge_list().tolist() == [[0, 1]]


def test_roundtrip_keeps_everything(tmp_path, sbm20):
    save_dataset(sbm20, tmp_path)
    g = load_dataset(tmp_path)
    assert (g.adjacency != sbm20.adjacency).nnz == 0
    np.testing.assert_array_equal(g.features, sbm20.features)
    np.testing.assert_array_equal(g.labels, sbm20.labels)
    np.testing.assert_array_equal(g.train_mask, sbm20.train_mask)


def test_missing_file_and_bad_index(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    save_dataset(path_graph(), tmp_path)
    (tmp_path / "edges.tsv").write_text("0\t7\n")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_overlapping_masks_rejected():
    with pytest.raises(DatasetError):
        Graph(adjacency_from_edges(3, []), np.eye(3), np.zeros(3, int), [0, 1], [1], [], 2)


def test_cora_counts():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "data" / "cora"
    if not root.is_dir():
        pytest.skip("data/cora not fetched")
    g = load_dataset(root)
    assert (g.num_nodes, g.features.shape[1], g.num_classes) == (2708, 1433, 7)
    # 5429 citation lines collapse to 5278 undirected edges after dedup
    assert g.num_edges == 5278


# --------------------------------------------------------------- similarity

def test_jaccard_triangle():
    s = jaccard_similarity(make_graph(3, [(0, 1), (1, 2), (0, 2)])).s.toarray()
    assert s[0, 1] == s[0, 2] == s[1, 2] == 1.0


def test_jaccard_path():
    s = jaccard_similarity(path_graph()).s.toarray()
    assert s[0, 1] == pytest.approx(2 / 3)
    assert s[1, 2] == pytest.approx(2 / 3)
    assert s[0, 2] == pytest.approx(1 / 3)


def test_jaccard_isolated_pair():
    assert jaccard_similarity(make_graph(2, [])).s.nnz == 0


@st.composite
def random_graphs(draw, max_n=40):
    n = draw(st.integers(2, max_n))
    p = draw(st.floats(0.0, 0.3))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((n, n)) < p, 1)
    return make_graph(n, np.argwhere(a))


@given(random_graphs())
def test_jaccard_matches_dense_enumeration(g):
    np.testing.assert_allclose(jaccard_similarity(g).s.toarray(),
                               dense_jaccard(g.adjacency.toarray()), atol=1e-15)


@given(random_graphs())
def test_similarity_laplacian_rows_sum_to_zero(g):
    lap = jaccard_similarity(g).laplacian
    np.testing.assert_allclose(np.asarray(lap.sum(axis=1)).ravel(), 0.0, atol=1e-12)


# ---------------------------------------------------------------------- hops

def test_hop_distance_cases():
    g = make_graph(4, [(0, 1), (1, 2)])
    assert hop_distance(g, 0, 2) == 2
    assert hop_distance(g, 0, 1) == 1
    assert hop_distance(g, 0, 3) == INFINITE_HOP
    assert math.isinf(hop_distance(make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)]), 0, 4))


@given(random_graphs(30))
def test_hop_distance_agrees_with_shortest_paths(g):
    hops = hop_matrix(g)
    n = g.num_nodes
    for i in range(min(n, 5)):
        for j in range(n):
            if i != j:
                want = hops[i, j] if hops[i, j] <= 3 else INFINITE_HOP
                assert hop_distance(g, i, j) == want


# ----------------------------------------------------------------------- SBM

def test_sbm_forced_cases():
    g = generate_sbm(SbmParams(6, 1.0, 0.0), seed=0)
    assert sorted(map(tuple, g.edge_list().tolist())) == [(0, 1), (0, 2), (1, 2),
                                                         (3, 4), (3, 5), (4, 5)]
    assert generate_sbm(SbmParams(10, 0.0, 0.0), seed=0).num_edges == 0


def test_sbm_rejects_heterophily():
    with pytest.raises(ValueError):
        SbmParams(10, 0.1, 0.2)


def test_sbm_intra_degree_expectation():
    n, p = 2000, 0.01
    mean_intra = []
    for seed in range(3):
        g = generate_sbm(SbmParams(n, p, 0.002), seed)
        e = g.edge_list()
        same = g.labels[e[:, 0]] == g.labels[e[:, 1]]
        mean_intra.append(2 * same.sum() / n)
    expect = (n / 2 - 1) * p
    # mean of n/2-node binomials; generous 3-sigma band per seed
    sigma = math.sqrt(expect * (1 - p) / n * 2) * 3
    assert all(abs(m - expect) < max(sigma, 0.3) for m in mean_intra)


def test_sbm_deterministic():
    a = generate_sbm(SbmParams(100, 0.1, 0.02), 5)
    b = generate_sbm(SbmParams(100, 0.1, 0.02), 5)
    assert (a.adjacency != b.adjacency).nnz == 0
    np.testing.assert_array_equal(a.features, b.features)


def test_theoretical_ratio():
    assert theoretical_ratio(0.01, 0.005) == pytest.approx(0.015 ** 2 / 0.985)
    assert theoretical_ratio(0.01, 0.005) == pytest.approx(2.2843e-4, rel=1e-4)
    assert theoretical_ratio(0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        theoretical_ratio(0.6, 0.5)


def test_two_hop_ratio_path():
    # path 0-1-2-3: unconnected pairs (0,2),(1,3),(0,3); two at two hops
    assert two_hop_ratio(make_graph(4, [(0, 1), (1, 2), (2, 3)])) == pytest.approx(2 / 3)


# -------------------------------------------------------------- normalization

def test_normalized_adjacency_small_cases():
    assert normalized_adjacency(sp.csr_matrix((1, 1))).toarray().tolist() == [[1.0]]
    np.testing.assert_allclose(normalized_adjacency(adjacency_from_edges(2, [(0, 1)])).toarray(),
                               0.5)


@given(random_graphs())
def test_left_normalization_row_stochastic(g):
    rows = np.asarray(normalized_adjacency(g.adjacency, "left").sum(axis=1)).ravel()
    np.testing.assert_allclose(rows, 1.0, atol=1e-12)


# ---------------------------------------------------------- triangle ranking

@given(st.integers(2, 3000), st.data())
def test_triu_rank_roundtrip(n, data):
    total = n * (n - 1) // 2
    flat = np.array(data.draw(st.lists(st.integers(0, total - 1), min_size=1, max_size=50)))
    i, j = triu_unrank(flat, n)
    assert np.all(i < j) and np.all(j < n)
    np.testing.assert_array_equal(triu_rank(i, j, n), flat)


def test_triu_unrank_boundaries_large_n():
    n = 200_000
    total = n * (n - 1) // 2
    flat = np.array([0, 1, n - 2, n - 1, total - 2, total - 1])
    i, j = triu_unrank(flat, n)
    np.testing.assert_array_equal(triu_rank(i, j, n), flat)


def test_sample_absent_ranks():
    rng = np.random.default_rng(0)
    present = np.array([0, 2, 4])
    out = sample_absent_ranks(rng, 4, present, 3)  # 6 cells, 3 free
    assert sorted(out.tolist()) == [1, 3, 5]
    with pytest.raises(ValueError):
        sample_absent_ranks(rng, 4, present, 4)
    out = sample_absent_ranks(rng, 1000, present, 200)
    assert len(set(out.tolist())) == 200 and not set(out.tolist()) & {0, 2, 4}
