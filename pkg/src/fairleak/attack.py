"""Black-box link-stealing attack on prediction rows.

Pairs of nodes are scored by the distance between their predicted class
distributions; the attacker guesses "connected" for small distances.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .graph import Graph, sample_absent_ranks, triu_rank, triu_unrank

log = logging.getLogger(__name__)

METRICS = ("cosine", "euclidean", "correlation", "chebyshev", "braycurtis",
           "canberra", "cityblock", "sqeuclidean")

# distance used wherever a single scalar risk is needed
RISK_METRIC = "sqeuclidean"


class AttackError(ValueError):
    pass


@dataclass
class PairSample:
    positives: np.ndarray  # (m, 2) connected pairs, u < v
    negatives: np.ndarray  # (m', 2) unconnected pairs, u < v
    seed: int
    exhausted: bool = False

    def pairs_and_labels(self):
        pairs = np.concatenate([self.positives, self.negatives])
        labels = np.concatenate([np.ones(len(self.positives), np.int64),
                                 np.zeros(len(self.negatives), np.int64)])
        return pairs, labels


def sample_pairs(g: Graph, seed: int, max_edges: int | None = None) -> PairSample:
    """All edges (optionally subsampled) plus an equal number of random
    unconnected pairs. Two-hop pairs count as unconnected."""
    rng = np.random.default_rng(seed)
    edges = g.edge_list()
    if len(edges) == 0:
        raise AttackError("graph has no edges to attack")
    if max_edges is not None and len(edges) > max_edges:
        keep = np.sort(rng.choice(len(edges), size=max_edges, replace=False))
        edges = edges[keep]
    n = g.num_nodes
    total = n * (n - 1) // 2
    available = total - g.num_edges
    if available <= 0:
        raise AttackError("graph is complete; no unconnected pairs exist")

    wanted = len(edges)
    edge_ranks = triu_rank(*g.edge_list().T, n)
    exhausted = available < wanted
    if exhausted:
        log.warning("only %d unconnected pairs available, %d requested", available, wanted)
    ranks = sample_absent_ranks(rng, n, edge_ranks, min(wanted, available))
    i, j = triu_unrank(ranks, n)
    negatives = np.stack([i, j], axis=1)
    return PairSample(edges, negatives, seed, exhausted)


# ------------------------------------------------------------------ distances

def _rowdot(a, b):
    return np.einsum("ij,ij->i", a, b)


def pair_distances(yi: np.ndarray, yj: np.ndarray, metric: str):
    """Row-wise distances between matching rows of ``yi`` and ``yj``.

    Returns ``(d, degenerate)``; ``degenerate`` marks cosine/correlation rows
    with a zero norm, where d is set to 0 for identical rows and 1 otherwise.
    """
    yi = np.atleast_2d(np.asarray(yi, dtype=np.float64))
    yj = np.atleast_2d(np.asarray(yj, dtype=np.float64))
    if yi.shape != yj.shape:
        raise ValueError("pair_distances needs equal-shaped inputs")
    diff = yi - yj
    adiff = np.abs(diff)
    degenerate = np.zeros(len(yi), dtype=bool)
    if metric in ("cosine", "correlation"):
        a, b = yi, yj
        if metric == "correlation":
            a = yi - yi.mean(axis=1, keepdims=True)
            b = yj - yj.mean(axis=1, keepdims=True)
        norms = np.sqrt(_rowdot(a, a) * _rowdot(b, b))
        degenerate = norms == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            d = 1.0 - _rowdot(a, b) / norms
        identical = np.all(diff == 0, axis=1)
        d[degenerate] = np.where(identical[degenerate], 0.0, 1.0)
        # clip tiny negative round-off
        d = np.maximum(d, 0.0)
    elif metric == "euclidean":
        d = np.sqrt(_rowdot(diff, diff))
    elif metric == "sqeuclidean":
        d = _rowdot(diff, diff)
    elif metric == "chebyshev":
        d = adiff.max(axis=1)
    elif metric == "cityblock":
        d = adiff.sum(axis=1)
    elif metric == "braycurtis":
        den = np.abs(yi + yj).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(den > 0, adiff.sum(axis=1) / den, 0.0)
    elif metric == "canberra":
        den = np.abs(yi) + np.abs(yj)
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(den > 0, adiff / den, 0.0)
        d = terms.sum(axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return d, degenerate


def pair_distance(yi, yj, metric: str) -> float:
    d, _ = pair_distances(np.asarray(yi)[None, :], np.asarray(yj)[None, :], metric)
    return float(d[0])


def sample_distances(sample: PairSample, y: np.ndarray, metric: str):
    """(d1 over positives, d0 over negatives)."""
    d1, _ = pair_distances(y[sample.positives[:, 0]], y[sample.positives[:, 1]], metric)
    d0, _ = pair_distances(y[sample.negatives[:, 0]], y[sample.negatives[:, 1]], metric)
    return d1, d0


# ----------------------------------------------------------------- AUC & risk

def attack_auc(distances, labels) -> float:
    """ROC AUC of the rule "smaller distance ⇒ connected" (Mann–Whitney U
    with average ranks for ties)."""
    d = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise AttackError("AUC needs both connected and unconnected pairs")
    ranks = rankdata(-d)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass
class ClusterResult:
    labels: np.ndarray
    degenerate: bool
    centers: tuple


def cluster_attack(distances, max_iter: int = 100) -> ClusterResult:
    """Deterministic 1-D 2-means split; the low-distance cluster is
    predicted connected (label 1)."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size < 2:
        raise AttackError("cluster_attack needs at least two distances")
    lo, hi = d.min(), d.max()
    if lo == hi:
        return ClusterResult(np.ones(d.size, np.int64), True, (lo, hi))
    assign = None
    for _ in range(max_iter):
        new = np.abs(d - lo) <= np.abs(d - hi)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        lo, hi = d[assign].mean(), d[~assign].mean()
    return ClusterResult(assign.astype(np.int64), False, (float(lo), float(hi)))


@dataclass
class RiskStats:
    d0_mean: float
    d1_mean: float
    d0_var: float
    d1_var: float
    f_risk: float
    f_risk_normalized: float
    degenerate: bool = False

    def __iter__(self):
        # unpacks as (f_risk, f_risk_normalized)
        return iter((self.f_risk, self.f_risk_normalized))


def risk_from_distances(d0, d1) -> RiskStats:
    d0 = np.asarray(d0, dtype=np.float64)
    d1 = np.asarray(d1, dtype=np.float64)
    if d0.size == 0 or d1.size == 0:
        raise AttackError("risk needs non-empty connected and unconnected sets")
    m0, m1 = d0.mean(), d1.mean()
    v0, v1 = d0.var(), d1.var()
    f = abs(m0 - m1)
    den = v0 + v1
    degenerate = den == 0
    norm = float("inf") if degenerate else 2.0 * f / den
    return RiskStats(float(m0), float(m1), float(v0), float(v1), float(f), norm, bool(degenerate))


def risk(sample: PairSample, y: np.ndarray, metric: str = RISK_METRIC) -> RiskStats:
    d1, d0 = sample_distances(sample, y, metric)
    return risk_from_distances(d0, d1)


# --------------------------------------------------------------------- report

@dataclass
class DistanceReport:
    auc: float
    d0_mean: float
    d1_mean: float
    d0_var: float
    d1_var: float
    cluster_accuracy: float


@dataclass
class AttackReport:
    per_distance: dict = field(default_factory=dict)
    mean_auc: float = float("nan")
    f_risk: float = float("nan")
    f_risk_normalized: float = float("nan")
    risk_metric: str = RISK_METRIC

    def to_json(self) -> dict:
        out = {"per_distance": {k: asdict(v) for k, v in self.per_distance.items()},
               "mean_auc": self.mean_auc, "f_risk": self.f_risk,
               "f_risk_normalized": _finite_or_none(self.f_risk_normalized),
               "risk_metric": self.risk_metric}
        return out


def _finite_or_none(x):
    return x if np.isfinite(x) else None


def run_attack(sample: PairSample, y: np.ndarray, metrics=METRICS,
               risk_metric: str = RISK_METRIC) -> AttackReport:
    pairs, labels = sample.pairs_and_labels()
    report = AttackReport(risk_metric=risk_metric)
    for metric in metrics:
        d, _ = pair_distances(y[pairs[:, 0]], y[pairs[:, 1]], metric)
        stats = risk_from_distances(d[labels == 0], d[labels == 1])
        guess = cluster_attack(d).labels
        report.per_distance[metric] = DistanceReport(
            auc=attack_auc(d, labels), d0_mean=stats.d0_mean, d1_mean=stats.d1_mean,
            d0_var=stats.d0_var, d1_var=stats.d1_var,
            cluster_accuracy=float(np.mean(guess == labels)))
    report.mean_auc = float(np.mean([r.auc for r in report.per_distance.values()]))
    stats = risk(sample, y, risk_metric)
    report.f_risk = stats.f_risk
    report.f_risk_normalized = stats.f_risk_normalized
    return report
