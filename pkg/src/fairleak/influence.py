"""Influence of individual training nodes on utility, bias and risk.

For a functional f of the trained parameters θ*, the influence of dropping
training node v is

    I_f(w_v) = −∇f(θ*)ᵀ (H + λI)⁻¹ ∇L_v(θ*),   H = (1/|V_l|) Σ_v ∇²L_v(θ*)

with λ a damping term. Upweighting node v by w_v in the |V_l|-normalized
training objective moves f by roughly w_v · I_f(w_v) / |V_l|.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .attack import PairSample
from .fairness import bias_grad_outputs, bias_value
from .gcn import (GcnModel, Propagation, backward, ce_logit_grad, cross_entropy_rows,
                  forward, one_hot, softmax_backward)
from .graph import Graph, SimilarityMatrix

log = logging.getLogger(__name__)

TARGETS = ("utility", "bias", "risk")


class InfluenceError(RuntimeError):
    pass


class CgFailure(InfluenceError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def unflatten(model: GcnModel, theta: np.ndarray):
    k = model.w1.size
    return theta[:k].reshape(model.w1.shape), theta[k:].reshape(model.w2.shape)


def _flat_backward(model, prop, g_z2):
    g1, g2 = backward(model, prop, g_z2)
    return np.concatenate([g1.ravel(), g2.ravel()])


def _train_index(g: Graph, v: int) -> int:
    hit = np.flatnonzero(g.train_mask == v)
    if hit.size == 0:
        raise InfluenceError(f"node {v} is not a training node")
    return int(hit[0])


# ----------------------------------------------------------- loss gradients

def per_node_loss_grad(model: GcnModel, prop: Propagation, g: Graph, v: int) -> np.ndarray:
    """∇θ of the single cross-entropy term of training node v."""
    _train_index(g, v)
    y = forward(model, prop)
    g_z2 = np.zeros_like(y)
    g_z2[v] = y[v] - one_hot(g.labels[[v]], y.shape[1])[0]
    return _flat_backward(model, prop, g_z2)


def total_loss_grad(model: GcnModel, prop: Propagation, g: Graph) -> np.ndarray:
    """∇θ Σ_{v∈V_l} L_v (unnormalized, unweighted)."""
    y = forward(model, prop)
    return _flat_backward(model, prop, ce_logit_grad(y, g.labels, g.train_mask))


def loss_grad_dots(model: GcnModel, prop: Propagation, g: Graph,
                   direction: np.ndarray) -> np.ndarray:
    """∇L_v · direction for every training node, in one forward-mode pass.

    Equivalent to stacking per_node_loss_grad rows and multiplying, without
    materializing the |V_l| × P Jacobian.
    """
    d1, d2 = unflatten(model, np.asarray(direction, dtype=np.float64))
    z1 = prop.ax @ model.w1
    dz1 = prop.ax @ d1
    mask = z1 > 0
    h = np.where(mask, z1, 0.0)
    dh = np.where(mask, dz1, 0.0)
    ah = np.asarray(prop.a_hat @ h)
    dah = np.asarray(prop.a_hat @ dh)
    idx = g.train_mask
    z2 = ah[idx] @ model.w2
    dz2 = dah[idx] @ model.w2 + ah[idx] @ d2
    z2 -= z2.max(axis=1, keepdims=True)
    y = np.exp(z2)
    y /= y.sum(axis=1, keepdims=True)
    resid = y - one_hot(g.labels[idx], y.shape[1])
    return np.einsum("ij,ij->i", resid, dz2)


# ----------------------------------------------------------------------- HVP

def default_step(theta: np.ndarray) -> float:
    return 1e-4 * (1.0 + float(np.max(np.abs(theta), initial=0.0)))


def hvp_central(grad_fn, theta: np.ndarray, v: np.ndarray, step: float | None = None,
                scale: float = 1.0) -> np.ndarray:
    """scale · ∇²F(θ) v by central differences of ``grad_fn`` = ∇F.

    The probe displacement is normalized so that its largest entry equals
    ``step`` and the result is rescaled, which keeps the truncation error
    independent of ‖v‖.
    """
    v = np.asarray(v, dtype=np.float64)
    vmax = float(np.max(np.abs(v), initial=0.0))
    if vmax == 0.0:
        return np.zeros_like(v)
    step = default_step(theta) if step is None else step
    u = v / vmax
    out = (grad_fn(theta + step * u) - grad_fn(theta - step * u)) * (scale * vmax / (2.0 * step))
    if not np.all(np.isfinite(out)):
        raise InfluenceError("non-finite Hessian-vector product")
    return out


def _loss_grad_at(model, prop, g):
    """∇θ Σ L_v as a function of θ, with the ReLU pattern frozen at the model.

    Freezing the pattern makes the gradient smooth in θ, so central
    differences return the (almost-everywhere) Hessian even when some
    pre-activations sit closer to zero than the probe step.
    """
    mask = (prop.ax @ model.w1) > 0
    idx = g.train_mask
    targets = one_hot(g.labels[idx], model.w2.shape[1])

    def fn(theta):
        w1, w2 = unflatten(model, theta)
        h = (prop.ax @ w1) * mask
        ah = np.asarray(prop.a_hat @ h)
        z2 = ah @ w2
        z2 -= z2.max(axis=1, keepdims=True)
        y = np.exp(z2)
        y /= y.sum(axis=1, keepdims=True)
        g_z2 = np.zeros_like(y)
        g_z2[idx] = y[idx] - targets
        g_w2 = ah.T @ g_z2
        g_z1 = np.asarray(prop.a_hat.T @ (g_z2 @ w2.T)) * mask
        return np.concatenate([(prop.ax.T @ g_z1).ravel(), g_w2.ravel()])
    return fn


def hvp(model: GcnModel, prop: Propagation, g: Graph, v: np.ndarray,
        step: float | None = None) -> np.ndarray:
    """H v with H = (1/|V_l|) Σ_v ∇²L_v at the model's parameters."""
    return hvp_central(_loss_grad_at(model, prop, g), model.flat(), v, step,
                       scale=1.0 / len(g.train_mask))


# ------------------------------------------------------------------- solver

@dataclass
class CgDiagnostics:
    iterations: int
    residual: float
    damping: float
    converged: bool
    attempts: int = 1


def inverse_hvp_op(matvec, b: np.ndarray, damping: float, tol: float = 1e-6,
                   max_iter: int = 500):
    """Solve (H + damping·I) x = b by conjugate gradients, H given as matvec."""
    if damping < 0:
        raise ValueError("damping must be >= 0")
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), CgDiagnostics(0, 0.0, damping, True)

    def op(x):
        return matvec(x) + damping * x

    a = LinearOperator((b.size, b.size), matvec=op, dtype=np.float64)
    count = [0]

    def tick(_):
        count[0] += 1

    x, _ = cg(a, b, rtol=tol, atol=0.0, maxiter=max_iter, callback=tick)
    residual = float(np.linalg.norm(op(x) - b)) / bnorm
    ok = bool(np.isfinite(residual) and residual <= tol * 1.0001)
    return x, CgDiagnostics(count[0], residual, damping, ok)


def inverse_hvp(model: GcnModel, prop: Propagation, g: Graph, b: np.ndarray,
                damping: float = 0.01, tol: float = 1e-6, max_iter: int = 500):
    """(H + damping·I)⁻¹ b for the model's loss Hessian; returns (x, diagnostics)."""
    if damping <= 0:
        raise ValueError("damping must be > 0")
    fn = _loss_grad_at(model, prop, g)
    theta = model.flat()
    step = default_step(theta)
    scale = 1.0 / len(g.train_mask)
    return inverse_hvp_op(lambda v: hvp_central(fn, theta, v, step, scale),
                          b, damping, tol, max_iter)


# --------------------------------------------------------------- functionals

def _sqeuclidean_risk_parts(y, sample: PairSample):
    out = []
    for pairs in (sample.negatives, sample.positives):
        if len(pairs) == 0:
            raise InfluenceError("risk functional needs non-empty pair classes")
        diff = y[pairs[:, 0]] - y[pairs[:, 1]]
        out.append((pairs, diff, np.einsum("ij,ij->i", diff, diff)))
    return out


def risk_value(y: np.ndarray, sample: PairSample) -> float:
    """Normalized f_risk = 2|d̄0 − d̄1| / (var d0 + var d1), sqeuclidean distance."""
    (_, _, d0), (_, _, d1) = _sqeuclidean_risk_parts(y, sample)
    return 2.0 * abs(d0.mean() - d1.mean()) / (d0.var() + d1.var())


def risk_grad_outputs(y: np.ndarray, sample: PairSample) -> np.ndarray:
    """∂(normalized f_risk)/∂Y."""
    (p0, diff0, d0), (p1, diff1, d1) = _sqeuclidean_risk_parts(y, sample)
    m0, m1 = d0.mean(), d1.mean()
    var = d0.var() + d1.var()
    if var == 0:
        raise InfluenceError("risk functional undefined at zero distance variance")
    gap = m0 - m1
    sign = np.sign(gap)
    n0, n1 = d0.size, d1.size
    # ∂F/∂d_k for negatives and positives
    g0 = 2.0 * (sign / n0 * var - abs(gap) * 2.0 * (d0 - m0) / n0) / var ** 2
    g1 = 2.0 * (-sign / n1 * var - abs(gap) * 2.0 * (d1 - m1) / n1) / var ** 2
    g_y = np.zeros_like(y)
    for pairs, diff, gd in ((p0, diff0, g0), (p1, diff1, g1)):
        contrib = 2.0 * gd[:, None] * diff
        np.add.at(g_y, pairs[:, 0], contrib)
        np.add.at(g_y, pairs[:, 1], -contrib)
    return g_y


def functional_value(model: GcnModel, prop: Propagation, g: Graph, target: str,
                     similarity: SimilarityMatrix | None = None,
                     sample: PairSample | None = None) -> float:
    y = forward(model, prop)
    if target == "utility":
        return float(np.sum(cross_entropy_rows(y, g.labels, g.train_mask)))
    if target == "bias":
        _need(similarity, "bias")
        return bias_value(y, similarity)
    if target == "risk":
        _need(sample, "risk")
        return float(risk_value(y, sample))
    raise ValueError(f"unknown target {target!r}")


def _need(aux, target):
    if aux is None:
        raise InfluenceError(f"target {target!r} needs its auxiliary input")


def grad_functional(model: GcnModel, prop: Propagation, g: Graph, target: str,
                    similarity: SimilarityMatrix | None = None,
                    sample: PairSample | None = None) -> np.ndarray:
    """∇θ f for f ∈ {utility (total train CE), bias, normalized risk}."""
    if target == "utility":
        return total_loss_grad(model, prop, g)
    y = forward(model, prop)
    if target == "bias":
        _need(similarity, "bias")
        g_y = bias_grad_outputs(y, similarity)
    elif target == "risk":
        _need(sample, "risk")
        g_y = risk_grad_outputs(y, sample)
    else:
        raise ValueError(f"unknown target {target!r}")
    return _flat_backward(model, prop, softmax_backward(y, g_y))


# ---------------------------------------------------------------- influence

@dataclass
class InfluenceVector:
    target: str
    node_ids: np.ndarray
    values: np.ndarray
    diagnostics: CgDiagnostics | None = None

    def as_dict(self) -> dict:
        return dict(zip(self.node_ids.tolist(), self.values.tolist()))

    def predicted_change(self, weights) -> float:
        """First-order change of f when training weights move from 0 to w."""
        w = np.asarray(weights, dtype=np.float64)
        return float(w @ self.values) / self.values.size


@dataclass
class InfluenceConfig:
    damping: float = 0.01
    tol: float = 1e-6
    max_iter: int = 500
    escalations: int = 3


def influence_all(model: GcnModel, prop: Propagation, g: Graph, target: str,
                  similarity: SimilarityMatrix | None = None,
                  sample: PairSample | None = None,
                  damping: float = 0.01, tol: float = 1e-6, max_iter: int = 500,
                  escalations: int = 3) -> InfluenceVector:
    """I_f(w_v) for every training node with one damped inverse-Hessian solve.

    Damping is multiplied by 10 after each failed solve, at most
    ``escalations`` times.
    """
    grad_f = grad_functional(model, prop, g, target, similarity, sample)
    lam = damping
    for attempt in range(escalations + 1):
        s, diag = inverse_hvp(model, prop, g, grad_f, lam, tol, max_iter)
        diag.attempts = attempt + 1
        if diag.converged:
            break
        log.warning("CG did not converge for %s (damping %.3g, residual %.3g)",
                    target, lam, diag.residual)
        lam *= 10.0
    else:
        raise CgFailure(f"inverse-HVP solve failed for target {target!r}", diag)
    values = -loss_grad_dots(model, prop, g, s)
    if not np.all(np.isfinite(values)):
        raise InfluenceError("non-finite influence values")
    return InfluenceVector(target, np.asarray(g.train_mask).copy(), values, diag)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise ValueError("pearson undefined for a constant vector")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------- I/O

def write_influences(path, vectors: dict):
    """CSV with columns node_id, i_util, i_bias, i_risk (missing → empty)."""
    cols = (("i_util", "utility"), ("i_bias", "bias"), ("i_risk", "risk"))
    node_ids = next(iter(vectors.values())).node_ids
    lookup = {t: v.values for t, v in vectors.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id"] + [c for c, _ in cols])
        for k, node in enumerate(node_ids):
            w.writerow([int(node)] + [repr(float(lookup[t][k])) if t in lookup else ""
                                      for _, t in cols])


def read_influences(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    node_ids = np.array([int(r["node_id"]) for r in rows], dtype=np.int64)
    out = {}
    for col, target in (("i_util", "utility"), ("i_bias", "bias"), ("i_risk", "risk")):
        if rows and rows[0][col] != "":
            out[target] = InfluenceVector(target, node_ids,
                                          np.array([float(r[col]) for r in rows]))
    return out


def diagnostics_json(vec: InfluenceVector) -> dict | None:
    return None if vec.diagnostics is None else asdict(vec.diagnostics)
