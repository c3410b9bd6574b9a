"""Graph data model, dataset I/O, Jaccard similarity and SBM synthesis."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

INFINITE_HOP = math.inf
UNLABELED = -1


class DatasetError(ValueError):
    """Raised when a dataset directory is missing files or is inconsistent."""


@dataclass
class Graph:
    """Undirected attributed graph with node-classification masks.

    ``adjacency`` is a symmetric 0/1 CSR matrix without stored diagonal.
    ``labels`` uses ``UNLABELED`` (-1) for nodes without a class.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.adjacency = _canonical_adjacency(self.adjacency)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_mask = np.asarray(self.train_mask, dtype=np.int64)
        self.val_mask = np.asarray(self.val_mask, dtype=np.int64)
        self.test_mask = np.asarray(self.test_mask, dtype=np.int64)
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with u < v, sorted."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    def with_adjacency(self, adjacency: sp.spmatrix) -> "Graph":
        return Graph(adjacency, self.features, self.labels, self.train_mask,
                     self.val_mask, self.test_mask, self.num_classes)

    def validate(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise DatasetError("adjacency must be square")
        if (self.adjacency != self.adjacency.T).nnz:
            raise DatasetError("adjacency must be symmetric")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features must have {n} rows")
        if self.labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {self.labels.shape[0]}")
        for name in ("train_mask", "val_mask", "test_mask"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DatasetError(f"{name} holds a node index out of range")
        masks = [set(self.train_mask.tolist()), set(self.val_mask.tolist()),
                 set(self.test_mask.tolist())]
        if masks[0] & masks[1] or masks[0] & masks[2] or masks[1] & masks[2]:
            raise DatasetError("train/val/test masks must be disjoint")
        if np.any(self.labels[self.train_mask] == UNLABELED):
            raise DatasetError("every train node needs a label")
        if np.any(self.labels >= self.num_classes):
            raise DatasetError("label index exceeds num_classes")


def _canonical_adjacency(a) -> sp.csr_matrix:
    a = sp.csr_matrix(a, dtype=np.float64)
    a = a.maximum(a.T).tolil()
    a.setdiag(0)
    a = a.tocsr()
    a.eliminate_zeros()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def adjacency_from_edges(n: int, edges) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency from an (m, 2) edge array; duplicates and
    self-loops are dropped."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise DatasetError("edge endpoint out of range")
    keep = edges[:, 0] != edges[:, 1]
    u, v = edges[keep, 0], edges[keep, 1]
    a = sp.coo_matrix((np.ones(u.size), (u, v)), shape=(n, n))
    return _canonical_adjacency(a)


# ---------------------------------------------------------------- dataset I/O

_DATASET_FILES = ("meta.json", "edges.tsv", "features.csv", "labels.txt",
                  "train.txt", "val.txt", "test.txt")


def _read_index_file(path: Path) -> np.ndarray:
    text = path.read_text().split()
    return np.array([int(t) for t in text], dtype=np.int64)


def load_dataset(directory) -> Graph:
    directory = Path(directory)
    for name in _DATASET_FILES:
        if not (directory / name).is_file():
            raise DatasetError(f"missing dataset file: {directory / name}")
    meta = json.loads((directory / "meta.json").read_text())
    n = int(meta["num_nodes"])

    raw = np.loadtxt(directory / "edges.tsv", dtype=np.int64, delimiter="\t",
                     ndmin=2)
    if raw.size == 0:
        raw = np.zeros((0, 2), dtype=np.int64)
    if raw.size and (raw.min() < 0 or raw.max() >= n):
        raise DatasetError("edges.tsv references a node index out of range")
    adjacency = adjacency_from_edges(n, raw)

    features = np.loadtxt(directory / "features.csv", delimiter=",", ndmin=2)
    if features.shape != (n, int(meta["feature_dim"])):
        raise DatasetError(
            f"features.csv has shape {features.shape}, expected "
            f"({n}, {meta['feature_dim']})")
    labels = _read_index_file(directory / "labels.txt")
    if labels.size != n:
        raise DatasetError(f"labels.txt has {labels.size} entries, expected {n}")

    return Graph(adjacency, features, labels,
                 _read_index_file(directory / "train.txt"),
                 _read_index_file(directory / "val.txt"),
                 _read_index_file(directory / "test.txt"),
                 num_classes=int(meta["num_classes"]))


def save_dataset(g: Graph, directory, edges_only: bool = False):
    """Write ``g`` in the plain-text dataset layout read by ``load_dataset``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    edges = g.edge_list()
    with open(directory / "edges.tsv", "w") as fh:
        for u, v in edges:
            fh.write(f"{u}\t{v}\n")
    if edges_only:
        return
    meta = {"num_nodes": g.num_nodes, "num_classes": g.num_classes,
            "feature_dim": int(g.features.shape[1])}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.savetxt(directory / "features.csv", g.features, delimiter=",",
               fmt="%.17g")
    np.savetxt(directory / "labels.txt", g.labels, fmt="%d")
    for name, idx in (("train", g.train_mask), ("val", g.val_mask),
                      ("test", g.test_mask)):
        np.savetxt(directory / f"{name}.txt", idx, fmt="%d")


# --------------------------------------------------------- similarity & hops

@dataclass
class SimilarityMatrix:
    s: sp.csr_matrix
    laplacian: sp.csr_matrix
    self_loop_convention: bool = True


def closed_neighborhood_overlap(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """|N[i] ∩ N[j]| for closed neighborhoods, as a sparse matrix."""
    n = adjacency.shape[0]
    closed = (adjacency + sp.identity(n, format="csr")).tocsr()
    return (closed @ closed).tocsr()


def jaccard_similarity(g: Graph) -> SimilarityMatrix:
    """Jaccard similarity of closed neighborhoods N(i) ∪ {i}.

    Only pairs within two hops share a closed-neighborhood member, so the
    result has the sparsity pattern of (A + I)^2 minus its diagonal.
    """
    n = g.num_nodes
    overlap = closed_neighborhood_overlap(g.adjacency).tocoo()
    size = g.degrees().astype(np.float64) + 1.0
    off = overlap.row != overlap.col
    r, c, inter = overlap.row[off], overlap.col[off], overlap.data[off]
    vals = inter / (size[r] + size[c] - inter)
    s = sp.csr_matrix((vals, (r, c)), shape=(n, n))
    s.sort_indices()
    return SimilarityMatrix(s=s, laplacian=laplacian_of(s))


def laplacian_of(s: sp.spmatrix) -> sp.csr_matrix:
    d = np.asarray(s.sum(axis=1)).ravel()
    return (sp.diags(d) - s).tocsr()


def hop_distance(g: Graph, i: int, j: int, cap: int = 3):
    """Shortest-path edge count between ``i`` and ``j``; ``INFINITE_HOP`` when
    disconnected or farther than ``cap``."""
    if i == j:
        raise ValueError("hop_distance needs two distinct nodes")
    indptr, indices = g.adjacency.indptr, g.adjacency.indices
    seen = {i}
    frontier = deque([(i, 0)])
    while frontier:
        node, dist = frontier.popleft()
        if dist >= cap:
            continue
        for nb in indices[indptr[node]:indptr[node + 1]]:
            nb = int(nb)
            if nb == j:
                return dist + 1
            if nb not in seen:
                seen.add(nb)
                frontier.append((nb, dist + 1))
    return INFINITE_HOP


def hop_matrix(g: Graph) -> np.ndarray:
    """All-pairs hop counts (``inf`` when disconnected). Dense; small graphs."""
    return csgraph.shortest_path(g.adjacency, method="D", unweighted=True,
                                 directed=False)


def normalized_adjacency(adjacency: sp.spmatrix, mode: str = "symmetric") -> sp.csr_matrix:
    """GCN propagation matrix built from A + I."""
    n = adjacency.shape[0]
    a_tilde = (sp.csr_matrix(adjacency) + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    if mode == "symmetric":
        inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
        return (inv_sqrt @ a_tilde @ inv_sqrt).tocsr()
    if mode == "left":
        return (sp.diags(1.0 / deg) @ a_tilde).tocsr()
    raise ValueError(f"unknown normalization mode {mode!r}")


def two_hop_ratio(g: Graph) -> float:
    """Fraction of unconnected node pairs that are exactly two hops apart."""
    n = g.num_nodes
    total_unconnected = n * (n - 1) // 2 - g.num_edges
    if total_unconnected <= 0:
        return 0.0
    overlap = sp.triu(closed_neighborhood_overlap(g.adjacency), k=1)
    within_two = overlap.nnz
    return (within_two - g.num_edges) / total_unconnected


def theoretical_ratio(p: float, q: float) -> float:
    """Closed-form two-hop ratio (p+q)^2 / (1-(p+q)) for a homophilous SBM."""
    s = p + q
    if s >= 1:
        raise ValueError("theoretical_ratio requires p + q < 1")
    return s * s / (1.0 - s)


# ------------------------------------------------------------------------ SBM

@dataclass
class SbmParams:
    n: int
    p: float
    q: float
    num_classes: int = 2
    feature_dim: int = 8
    class_mean_separation: float = 1.0
    train_frac: float = 0.6
    val_frac: float = 0.2

    def __post_init__(self):
        # p == q is accepted as the no-homophily control
        if not 0 <= self.q <= self.p <= 1:
            raise ValueError("SBM needs 0 <= q <= p <= 1")
        if self.n < self.num_classes or self.num_classes < 1:
            raise ValueError("SBM needs at least one node per class")

    @property
    def homophilous(self) -> bool:
        return self.p > self.q


def sbm_labels(n: int, num_classes: int) -> np.ndarray:
    """Contiguous balanced class blocks."""
    return (np.arange(n) * num_classes) // n


def _sample_block(rng, rows: np.ndarray, cols: np.ndarray, prob: float,
                  diagonal: bool):
    if prob <= 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    if diagonal:
        m = rows.size
        cells = m * (m - 1) // 2
    else:
        cells = rows.size * cols.size
    if cells == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    k = rng.binomial(cells, prob)
    flat = rng.choice(cells, size=k, replace=False)
    if diagonal:
        a, b = triu_unrank(flat, rows.size)
        return rows[a], rows[b]
    return rows[flat // cols.size], cols[flat % cols.size]


def triu_unrank(flat: np.ndarray, n: int):
    """Map linear indices of the strict upper triangle (row-major) to (i, j)."""
    flat = np.asarray(flat, dtype=np.int64)
    i = (n - 2 - np.floor(np.sqrt(-8.0 * flat + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    # float rounding can land one row off near row boundaries
    i[flat < _row_start(i, n)] -= 1
    i[flat >= _row_start(i + 1, n)] += 1
    j = flat - _row_start(i, n) + i + 1
    return i, j


def _row_start(i, n):
    return i * n - i * (i + 1) // 2


def triu_rank(i: np.ndarray, j: np.ndarray, n: int) -> np.ndarray:
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    return lo * n - lo * (lo + 1) // 2 + (hi - lo - 1)


def sample_absent_ranks(rng, n: int, present_ranks, k: int) -> np.ndarray:
    """k distinct upper-triangle cell ranks not in ``present_ranks``, drawn
    uniformly by rejection (cheap while the matrix is sparse)."""
    total = n * (n - 1) // 2
    taken = set(np.asarray(present_ranks).tolist())
    if k > total - len(taken):
        raise ValueError("not enough absent cells to sample from")
    if 2 * (len(taken) + k) > total:
        # dense regime: enumerate instead of rejecting
        free = np.ones(total, dtype=bool)
        free[np.asarray(present_ranks, dtype=np.int64)] = False
        return rng.choice(np.flatnonzero(free), size=k, replace=False)
    out = []
    while len(out) < k:
        for r in rng.integers(0, total, size=2 * (k - len(out)) + 16).tolist():
            if r not in taken:
                taken.add(r)
                out.append(r)
                if len(out) == k:
                    break
    return np.asarray(out, dtype=np.int64)


def random_split(labels: np.ndarray, train_frac: float, val_frac: float,
                 rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class stratified split of labelled nodes."""
    train, val, test = [], [], []
    for c in np.unique(labels[labels != UNLABELED]):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = max(1, int(round(train_frac * idx.size)))
        n_va = int(round(val_frac * idx.size))
        train.append(idx[:n_tr])
        val.append(idx[n_tr:n_tr + n_va])
        test.append(idx[n_tr + n_va:])
    return tuple(np.sort(np.concatenate(part)) for part in (train, val, test))


def generate_sbm(params: SbmParams, seed: int) -> Graph:
    rng = np.random.default_rng(seed)
    n, c = params.n, params.num_classes
    labels = sbm_labels(n, c)
    blocks = [np.flatnonzero(labels == k) for k in range(c)]
    us, vs = [], []
    for a in range(c):
        for b in range(a, c):
            prob = params.p if a == b else params.q
            u, v = _sample_block(rng, blocks[a], blocks[b], prob, diagonal=(a == b))
            us.append(u)
            vs.append(v)
    edges = np.stack([np.concatenate(us), np.concatenate(vs)], axis=1)
    adjacency = adjacency_from_edges(n, edges)

    means = _class_means(c, params.feature_dim, params.class_mean_separation, rng)
    features = means[labels] + rng.standard_normal((n, params.feature_dim))
    train, val, test = random_split(labels, params.train_frac, params.val_frac, rng)
    return Graph(adjacency, features, labels, train, val, test, num_classes=c)


def _class_means(c: int, dim: int, separation: float, rng) -> np.ndarray:
    if dim >= c:
        means = np.zeros((c, dim))
        means[np.arange(c), np.arange(c)] = separation
        return means
    directions = rng.standard_normal((c, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * directions
