"""Synthetic checks of the fairness/privacy trade-off on stochastic block models."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .attack import pair_distances, sample_pairs
from .gcn import Propagation, TrainConfig, accuracy, train
from .graph import (SbmParams, _class_means, generate_sbm, jaccard_similarity,
                    normalized_adjacency, sample_absent_ranks, theoretical_ratio, triu_rank,
                    triu_unrank, two_hop_ratio)

log = logging.getLogger(__name__)

HOP_CLASSES = ("1", "2", ">2")


class StudyError(ValueError):
    pass


# --------------------------------------------------------- trade-off study

def hop_class_pairs(g, seed: int, max_pairs: int | None = None):
    """Node pairs grouped by hop distance: all edges, all 2-hop pairs (or a
    sample of ``max_pairs``) and an equally sized sample of farther pairs."""
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    a = g.adjacency
    reach = (a + sp.identity(n, format="csr")) @ (a + sp.identity(n, format="csr"))
    reach = sp.triu(reach, k=1).tocoo()
    within2 = triu_rank(reach.row, reach.col, n)
    edges = g.edge_list()
    two = np.setdiff1d(within2, triu_rank(edges[:, 0], edges[:, 1], n), assume_unique=True)
    if max_pairs is not None and two.size > max_pairs:
        two = np.sort(rng.choice(two, size=max_pairs, replace=False))
    far_count = min(len(edges), n * (n - 1) // 2 - within2.size)
    far = sample_absent_ranks(rng, n, within2, far_count)

    def unrank(r):
        i, j = triu_unrank(r, n)
        return np.stack([i, j], axis=1)
    return {"1": edges, "2": unrank(two), ">2": unrank(far)}


@dataclass
class PhaseDistances:
    d0_mean: float
    d1_mean: float
    per_hop: dict


def _phase(y, groups, sample, metric):
    per_hop = {}
    for k, pairs in groups.items():
        d, _ = pair_distances(y[pairs[:, 0]], y[pairs[:, 1]], metric)
        per_hop[k] = float(d.mean()) if d.size else float("nan")
    d1, _ = pair_distances(y[sample.positives[:, 0]], y[sample.positives[:, 1]], metric)
    d0, _ = pair_distances(y[sample.negatives[:, 0]], y[sample.negatives[:, 1]], metric)
    return PhaseDistances(float(d0.mean()), float(d1.mean()), per_hop)


def _rel(after, before):
    return (after - before) / before if before else float("nan")


@dataclass
class TradeoffSeed:
    seed: int
    vanilla: PhaseDistances
    reg: PhaseDistances
    rel_d0: float
    rel_d1: float
    rel_per_hop: dict
    two_hop_ratio: float
    vanilla_bias: float
    reg_bias: float
    vanilla_accuracy: float
    reg_accuracy: float


@dataclass
class TradeoffStudy:
    params: SbmParams
    hypotheses_met: bool
    theoretical_ratio: float | None
    seeds: list[TradeoffSeed] = field(default_factory=list)
    metric: str = "sqeuclidean"
    runtime_s: float = 0.0

    @property
    def mean_rel_d0(self) -> float:
        return float(np.mean([s.rel_d0 for s in self.seeds]))

    @property
    def mean_rel_d1(self) -> float:
        return float(np.mean([s.rel_d1 for s in self.seeds]))

    @property
    def mean_two_hop_ratio(self) -> float:
        return float(np.mean([s.two_hop_ratio for s in self.seeds]))

    @property
    def ratio_deviation(self) -> float | None:
        if not self.theoretical_ratio:
            return None
        return self.mean_two_hop_ratio / self.theoretical_ratio - 1.0

    def to_json(self) -> dict:
        return {"params": dataclasses.asdict(self.params), "metric": self.metric,
                "hypotheses_met": self.hypotheses_met,
                "theoretical_ratio": self.theoretical_ratio,
                "empirical_ratio": self.mean_two_hop_ratio,
                "ratio_deviation": self.ratio_deviation,
                "mean_rel_d0": self.mean_rel_d0, "mean_rel_d1": self.mean_rel_d1,
                "seeds": [dataclasses.asdict(s) for s in self.seeds],
                "runtime_s": self.runtime_s}


def synth_tradeoff_study(params: SbmParams, config: TrainConfig | None = None,
                         lambda_fair: float = 0.5, seeds=(0, 1, 2),
                         metric: str = "sqeuclidean",
                         max_two_hop_pairs: int | None = 200_000) -> TradeoffStudy:
    """Train vanilla and fairness-regularized GCNs on SBM graphs and track how
    the mean distances of connected (d̄1) and unconnected (d̄0) pairs move."""
    t0 = time.perf_counter()
    config = config or TrainConfig()
    met = params.homophilous and params.p + params.q < 1
    if not met:
        log.warning("SBM outside the homophily hypotheses; trade-off not asserted")
    theory = theoretical_ratio(params.p, params.q) if params.p + params.q < 1 else None
    study = TradeoffStudy(params, met, theory, metric=metric)
    for seed in seeds:
        g = generate_sbm(params, seed)
        if g.num_edges == 0:
            raise StudyError("degenerate SBM: no edges")
        sim = jaccard_similarity(g)
        prop = Propagation.of(g)
        sample = sample_pairs(g, seed)
        groups = hop_class_pairs(g, seed, max_two_hop_pairs)
        van = train(g, dataclasses.replace(config, seed=seed, lambda_fair=0.0), sim, prop)
        reg = train(g, dataclasses.replace(config, seed=seed, lambda_fair=lambda_fair), sim, prop)
        pv = _phase(van.predictions, groups, sample, metric)
        pr = _phase(reg.predictions, groups, sample, metric)
        acc_mask = g.test_mask
        study.seeds.append(TradeoffSeed(
            seed, pv, pr, _rel(pr.d0_mean, pv.d0_mean), _rel(pr.d1_mean, pv.d1_mean),
            {k: _rel(pr.per_hop[k], pv.per_hop[k]) for k in HOP_CLASSES},
            two_hop_ratio(g), van.history[-1].bias if van.history else float("nan"),
            reg.history[-1].bias if reg.history else float("nan"),
            accuracy(van.predictions, g.labels, acc_mask),
            accuracy(reg.predictions, g.labels, acc_mask)))
    study.runtime_s = time.perf_counter() - t0
    return study


# ------------------------------------------------------------- risk model

def delta_closed_form(d_i: int, d_i_other: int, d_j: int, d_j_other: int) -> float:
    """δ = d_i^o/((d_i+1)(d_i+2)) − d_j^o/((d_j+1)(d_j+2)), where ^o counts
    neighbours in the other class."""
    return d_i_other / ((d_i + 1) * (d_i + 2)) - d_j_other / ((d_j + 1) * (d_j + 2))


@dataclass
class RiskModelReport:
    sigma: float
    pairs: np.ndarray
    empirical: np.ndarray
    closed_form: np.ndarray
    mean_abs_deviation: float
    max_abs_deviation: float

    def to_json(self) -> dict:
        return {"sigma": self.sigma, "num_pairs": int(len(self.pairs)),
                "mean_abs_deviation": self.mean_abs_deviation,
                "max_abs_deviation": self.max_abs_deviation,
                "mean_empirical": float(self.empirical.mean()),
                "mean_closed_form": float(self.closed_form.mean())}


def risk_model_check(params: SbmParams, seed: int = 0, sigma: float = 0.1,
                     num_pairs: int = 200, mu=None, graph=None) -> RiskModelReport:
    """Compare the edge-induced change in aggregated-embedding distance,
    Δd = ‖(d0_i − d0_j) − (d1_i − d1_j)‖ under left-normalized one-hop
    aggregation, with its closed form ‖(μ1 − μ0) δ‖ on intra-class pairs that
    are not connected.

    Embeddings are μ_class + σ·z with z standard normal; the noise draw is
    shared across σ values for a given seed.
    """
    if params.num_classes != 2:
        raise StudyError("risk model check needs a two-class SBM")
    g = graph if graph is not None else generate_sbm(params, seed)
    rng = np.random.default_rng([seed, 1])
    n = g.num_nodes
    labels = g.labels
    for c in (0, 1):
        if not np.any(labels == c):
            raise StudyError(f"class {c} has no nodes")
    mu = _class_means(2, params.feature_dim, params.class_mean_separation, rng) \
        if mu is None else np.asarray(mu, dtype=np.float64)
    z = rng.standard_normal((n, mu.shape[1]))
    emb = mu[labels] + sigma * z

    a = g.adjacency
    deg = g.degrees()
    other = np.asarray(a @ (labels == 1).astype(np.int64)).ravel()
    other = np.where(labels == 1, deg - other, other)
    a_left = normalized_adjacency(a, "left")
    agg0 = np.asarray(a_left @ emb)

    pairs = _intra_class_nonedges(g, rng, num_pairs)
    emp = np.empty(len(pairs))
    closed = np.empty(len(pairs))
    lil = a.tolil()
    for k, (i, j) in enumerate(pairs):
        lil[i, j] = 1
        lil[j, i] = 1
        rows = normalized_adjacency(lil.tocsr(), "left")[[i, j]]
        lil[i, j] = 0
        lil[j, i] = 0
        agg1 = np.asarray(rows @ emb)
        d0 = agg0[i] - agg0[j]
        d1 = agg1[0] - agg1[1]
        emp[k] = np.linalg.norm(d0 - d1)
        delta = delta_closed_form(deg[i], other[i], deg[j], other[j])
        closed[k] = np.linalg.norm((mu[1] - mu[0]) * delta)
    dev = np.abs(emp - closed)
    return RiskModelReport(sigma, pairs, emp, closed, float(dev.mean()), float(dev.max()))


def _intra_class_nonedges(g, rng, k):
    n = g.num_nodes
    labels = g.labels
    out = []
    seen = set()
    edges = set(triu_rank(*g.edge_list().T, n).tolist())
    attempts = 0
    while len(out) < k and attempts < 1000 * k:
        attempts += 1
        i, j = rng.integers(0, n, size=2)
        if i == j or labels[i] != labels[j]:
            continue
        r = int(triu_rank(np.array([i]), np.array([j]), n)[0])
        if r in edges or r in seen:
            continue
        seen.add(r)
        out.append((min(i, j), max(i, j)))
    if not out:
        raise StudyError("no unconnected intra-class pairs found")
    return np.array(out, dtype=np.int64)
