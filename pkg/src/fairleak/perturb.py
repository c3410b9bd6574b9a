"""Edge-level graph perturbations.

``pp_perturb`` injects heterophilic edges between nodes a trained model
assigns to different classes. ``edge_rand`` and ``lap_graph`` are the two
edge-DP baselines (randomized response and Laplace noise with top-k edge
selection). All three work on upper-triangle cell ranks so that dense noise
never needs an n × n array.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import (Graph, adjacency_from_edges, sample_absent_ranks, save_dataset,
                    triu_rank, triu_unrank)

log = logging.getLogger(__name__)

MECHANISMS = ("pp", "edge_rand", "lap_graph")


@dataclass
class Perturbation:
    adjacency: sp.csr_matrix  # perturbed A′
    mechanism: str
    params: dict
    seed: int
    exhausted: bool = False
    stats: dict = field(default_factory=dict)

    def delta(self, original: sp.spmatrix) -> sp.csr_matrix:
        """A′ − A (entries ±1; only +1 for pp)."""
        return (self.adjacency - sp.csr_matrix(original)).tocsr()

    def apply(self, g: Graph) -> Graph:
        return g.with_adjacency(self.adjacency)

    def sidecar(self) -> dict:
        return {"mechanism": self.mechanism, "params": self.params, "seed": self.seed,
                "exhausted": self.exhausted, **self.stats}


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def _from_ranks(n, ranks):
    i, j = triu_unrank(np.asarray(ranks, dtype=np.int64), n)
    return adjacency_from_edges(n, np.stack([i, j], axis=1))


def _edge_ranks(g: Graph):
    return triu_rank(*g.edge_list().T, g.num_nodes)


# ----------------------------------------------------------- heterophilic

def pp_perturb(g: Graph, y_pred: np.ndarray, gamma: float = 0.5, seed: int = 0) -> Perturbation:
    """Add round(γ·deg(i)) random heterophilic non-edges at every node i.

    Budgets come from the original degrees. Candidates for node i are nodes
    with a different predicted class that are neither existing neighbours
    nor already joined to i by an earlier insertion.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    classes = np.argmax(y_pred, axis=1)
    budgets = _round_half_up(gamma * g.degrees())
    adj = g.adjacency
    added = [[] for _ in range(n)]
    new_u, new_v = [], []
    exhausted = False
    for i in np.flatnonzero(budgets > 0).tolist():
        cand = classes != classes[i]
        cand[adj.indices[adj.indptr[i]:adj.indptr[i + 1]]] = False
        cand[added[i]] = False
        pool = np.flatnonzero(cand)
        k = int(budgets[i])
        if pool.size < k:
            exhausted = True
            k = pool.size
        if k == 0:
            continue
        for j in rng.choice(pool, size=k, replace=False).tolist():
            added[i].append(j)
            added[j].append(i)
            new_u.append(i)
            new_v.append(j)
    if exhausted:
        log.warning("heterophilic candidates exhausted for some nodes")
    delta = adjacency_from_edges(n, np.stack([np.asarray(new_u, np.int64),
                                              np.asarray(new_v, np.int64)], axis=1))
    a_prime = (adj + delta).tocsr()
    return Perturbation(a_prime, "pp", {"gamma": gamma}, seed, exhausted,
                        {"added_edges": int(delta.nnz // 2), "removed_edges": 0})


# ---------------------------------------------------------------- edge DP

def flip_probability(eps: float) -> float:
    return 1.0 / (1.0 + math.exp(eps)) if eps < 700 else 0.0


def edge_rand(g: Graph, eps: float = 1.0, seed: int = 0) -> Perturbation:
    """Randomized response on each upper-triangle cell.

    The number of flipped cells is drawn first and their positions are then
    sampled uniformly, which is equivalent to independent per-cell flips.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    total = n * (n - 1) // 2
    k = int(rng.binomial(total, flip_probability(eps))) if total else 0
    flips = rng.choice(total, size=k, replace=False) if k else np.zeros(0, np.int64)
    edges = _edge_ranks(g)
    kept = np.setxor1d(edges, flips, assume_unique=True)
    removed = int(np.intersect1d(edges, flips, assume_unique=True).size)
    return Perturbation(_from_ranks(n, kept), "edge_rand", {"eps": eps}, seed, False,
                        {"flipped_cells": k, "added_edges": k - removed,
                         "removed_edges": removed})


def _laplace_ppf_upper(log_u: np.ndarray, scale: float) -> np.ndarray:
    """Laplace(0, scale) quantiles for log-probabilities log u, u ≥ ½ typical.

    Works in log space so order statistics close to 1 keep full precision.
    """
    u = np.exp(log_u)
    one_minus = -np.expm1(log_u)
    hi = -scale * np.log(2.0 * one_minus)
    lo = scale * np.log(2.0 * u)
    return np.where(u >= 0.5, hi, lo)


def top_order_statistics(rng, m: int, k: int, scale: float) -> np.ndarray:
    """Largest k of m iid Laplace(0, scale) draws, in decreasing order,
    generated without drawing the other m − k."""
    k = min(k, m)
    if k <= 0:
        return np.zeros(0)
    # U_(m) = V_1^{1/m}, U_(m-i) = U_(m-i+1) · V_{i+1}^{1/(m-i)}
    log_v = np.log(rng.random(k))
    log_u = np.cumsum(log_v / (m - np.arange(k)))
    return _laplace_ppf_upper(log_u, scale)


def lap_graph(g: Graph, eps: float = 1.0, seed: int = 0,
              count_share: float = 0.01) -> Perturbation:
    """Laplace noise on every cell, keeping the Ê largest as edges.

    A share of the budget perturbs the edge count, Ê = |E| + Lap(1/ε₁); the
    rest scales the per-cell noise Lap(1/ε₂). Non-edge cells are handled
    lazily: only their top Ê order statistics are drawn, at uniformly random
    positions.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    total = n * (n - 1) // 2
    eps_count = count_share * eps
    eps_cells = eps - eps_count
    m_edges = g.num_edges
    noisy_count = m_edges + rng.laplace(0.0, 1.0 / eps_count)
    e_hat = int(min(total, max(0, _round_half_up(noisy_count))))

    edges = _edge_ranks(g)
    edge_scores = 1.0 + rng.laplace(0.0, 1.0 / eps_cells, size=m_edges)
    m_absent = total - m_edges
    absent_scores = top_order_statistics(rng, m_absent, e_hat, 1.0 / eps_cells)
    absent_ranks = sample_absent_ranks(rng, n, edges, absent_scores.size)

    scores = np.concatenate([edge_scores, absent_scores])
    ranks = np.concatenate([edges, absent_ranks])
    keep = np.argsort(-scores, kind="stable")[:e_hat]
    kept = ranks[keep]
    retained = int(np.sum(keep < m_edges))
    return Perturbation(_from_ranks(n, kept), "lap_graph",
                        {"eps": eps, "count_share": count_share}, seed, False,
                        {"noisy_edge_count": e_hat, "added_edges": e_hat - retained,
                         "removed_edges": m_edges - retained})


def dp_perturb(g: Graph, mechanism: str, eps: float, seed: int) -> Perturbation:
    if mechanism == "edge_rand":
        return edge_rand(g, eps, seed)
    if mechanism == "lap_graph":
        return lap_graph(g, eps, seed)
    raise ValueError(f"unknown DP mechanism {mechanism!r}")


# ---------------------------------------------------------------------- I/O

def save_perturbed(g: Graph, pert: Perturbation, directory):
    """Write the perturbed graph as a dataset directory plus perturbation.json."""
    directory = Path(directory)
    save_dataset(pert.apply(g), directory)
    write_sidecar(pert, directory / "perturbation.json")


def write_sidecar(pert: Perturbation, path):
    Path(path).write_text(json.dumps(pert.sidecar(), indent=2) + "\n")
