"""Two-layer GCN with hand-derived gradients.

Y = softmax(Â · relu(Â X W1) · W2). Everything is float64 and sequential so
a (seed, config, data) triple determines the trained weights bit-for-bit.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fairness import bias_grad_outputs, bias_value
from .graph import Graph, SimilarityMatrix, normalized_adjacency

log = logging.getLogger(__name__)


class StaleCacheError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    hidden: int = 16
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    lambda_fair: float = 0.0
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.lambda_fair < 0:
            raise ValueError("lambda_fair must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Propagation:
    """A normalized adjacency together with the pre-propagated features Â X."""

    a_hat: sp.csr_matrix
    ax: np.ndarray

    @classmethod
    def build(cls, adjacency, features, mode="symmetric"):
        a_hat = normalized_adjacency(adjacency, mode)
        return cls(a_hat, np.asarray(a_hat @ features))

    @classmethod
    def of(cls, g: Graph, mode="symmetric"):
        return cls.build(g.adjacency, g.features, mode)


@dataclass
class _Cache:
    version: int
    prop_id: int
    z1: np.ndarray
    h: np.ndarray
    ah: np.ndarray
    y: np.ndarray


@dataclass
class GcnModel:
    w1: np.ndarray
    w2: np.ndarray
    _version: int = field(default=0, repr=False)
    _cache: _Cache | None = field(default=None, repr=False)

    @classmethod
    def init(cls, in_dim: int, hidden: int, num_classes: int, seed: int):
        rng = np.random.default_rng(seed)
        r1 = math.sqrt(6.0 / (in_dim + hidden))
        r2 = math.sqrt(6.0 / (hidden + num_classes))
        w1 = rng.uniform(-r1, r1, size=(in_dim, hidden))
        w2 = rng.uniform(-r2, r2, size=(hidden, num_classes))
        return cls(w1, w2)

    @property
    def num_params(self) -> int:
        return self.w1.size + self.w2.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def set_flat(self, theta: np.ndarray):
        k = self.w1.size
        self.w1 = np.array(theta[:k], dtype=np.float64).reshape(self.w1.shape)
        self.w2 = np.array(theta[k:], dtype=np.float64).reshape(self.w2.shape)
        self.touch()

    def with_flat(self, theta: np.ndarray) -> "GcnModel":
        other = GcnModel(self.w1.copy(), self.w2.copy())
        other.set_flat(theta)
        return other

    def copy(self) -> "GcnModel":
        return GcnModel(self.w1.copy(), self.w2.copy())

    def touch(self):
        self._version += 1
        self._cache = None


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: GcnModel, prop: Propagation) -> np.ndarray:
    """Row-stochastic predictions; caches activations for ``backward``."""
    z1 = prop.ax @ model.w1
    h = np.maximum(z1, 0.0)
    ah = np.asarray(prop.a_hat @ h)
    z2 = ah @ model.w2
    if not np.all(np.isfinite(z2)):
        raise FloatingPointError("non-finite logits in GCN forward pass")
    y = softmax(z2)
    model._cache = _Cache(model._version, id(prop), z1, h, ah, y)
    return y


def predict(model: GcnModel, prop: Propagation) -> np.ndarray:
    return forward(model, prop)


def _valid_cache(model: GcnModel, prop: Propagation) -> _Cache:
    c = model._cache
    if c is None or c.version != model._version or c.prop_id != id(prop):
        raise StaleCacheError("forward cache does not match current weights/graph; "
                              "call forward() first")
    return c


def softmax_backward(y: np.ndarray, g_y: np.ndarray) -> np.ndarray:
    """Pull an upstream gradient w.r.t. Y back to the logits."""
    return y * (g_y - np.sum(g_y * y, axis=1, keepdims=True))


def backward(model: GcnModel, prop: Propagation, g_z2: np.ndarray):
    """Parameter gradients given the gradient w.r.t. the output logits."""
    c = _valid_cache(model, prop)
    g_w2 = c.ah.T @ g_z2
    g_h = np.asarray(prop.a_hat.T @ (g_z2 @ model.w2.T))
    g_z1 = g_h * (c.z1 > 0)
    g_w1 = prop.ax.T @ g_z1
    return g_w1, g_w2


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_weights(weights, n_train):
    if weights is None:
        return np.zeros(n_train)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n_train,):
        raise ValueError(f"expected {n_train} loss weights, got {w.shape}")
    if np.any(w < -1) or np.any(w > 1):
        raise ValueError("loss weights must lie in [-1, 1]")
    return w


def cross_entropy_rows(y: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> np.ndarray:
    p = y[idx, labels[idx]]
    return -np.log(np.maximum(p, np.finfo(float).tiny))


def loss_weighted(y, labels, train_idx, weights=None) -> float:
    """Σ_v (1 + w_v) · CE(ŷ_v, y_v) over the training nodes."""
    w = _check_weights(weights, len(train_idx))
    return float(np.sum((1.0 + w) * cross_entropy_rows(y, labels, np.asarray(train_idx))))


def ce_logit_grad(y, labels, train_idx, weights=None, num_classes=None):
    """d(loss_weighted)/d(logits)."""
    train_idx = np.asarray(train_idx)
    w = _check_weights(weights, train_idx.size)
    g = np.zeros_like(y)
    c = y.shape[1] if num_classes is None else num_classes
    g[train_idx] = (1.0 + w)[:, None] * (y[train_idx] - one_hot(labels[train_idx], c))
    return g


def grad(model: GcnModel, prop: Propagation, labels, train_idx, weights=None,
         lambda_fair: float = 0.0, similarity: SimilarityMatrix | None = None):
    """Gradient of loss_weighted + lambda_fair * f_bias w.r.t. (W1, W2).

    Uses the activations cached by the last ``forward`` on ``prop``.
    """
    c = _valid_cache(model, prop)
    g_z2 = ce_logit_grad(c.y, labels, train_idx, weights)
    if lambda_fair:
        if similarity is None:
            raise ValueError("lambda_fair > 0 needs a similarity matrix")
        g_z2 += softmax_backward(c.y, lambda_fair * bias_grad_outputs(c.y, similarity))
    return backward(model, prop, g_z2)


def accuracy(y: np.ndarray, labels: np.ndarray, mask) -> float:
    mask = np.asarray(mask)
    if mask.size == 0:
        raise ValueError("accuracy needs a non-empty mask")
    return float(np.mean(np.argmax(y[mask], axis=1) == labels[mask]))


# ------------------------------------------------------------------ training

@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            out.append(p - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps))
        return out


@dataclass
class Sgd:
    lr: float

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


def make_optimizer(config: TrainConfig):
    return Adam(config.learning_rate) if config.optimizer == "adam" else Sgd(config.learning_rate)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    acc: float
    bias: float


@dataclass
class TrainResult:
    model: GcnModel
    predictions: np.ndarray
    history: list[EpochRecord]
    optimizer: object = None


def objective(model, prop, g: Graph, weights, lambda_fair, similarity, weight_decay):
    """Per-step training objective (value, (g_w1, g_w2)).

    (loss_weighted + lambda_fair * f_bias) / |V_l| + weight_decay/2 · ||θ||².
    """
    y = forward(model, prop)
    n_l = len(g.train_mask)
    value = loss_weighted(y, g.labels, g.train_mask, weights)
    if lambda_fair:
        value += lambda_fair * bias_value(y, similarity)
    g1, g2 = grad(model, prop, g.labels, g.train_mask, weights, lambda_fair, similarity)
    value = value / n_l + 0.5 * weight_decay * (np.sum(model.w1 ** 2) + np.sum(model.w2 ** 2))
    g1 = g1 / n_l + weight_decay * model.w1
    g2 = g2 / n_l + weight_decay * model.w2
    return value, y, (g1, g2)


def _run_epochs(model, prop, g, config, epochs, weights, lambda_fair, similarity,
                optimizer, start_epoch=0):
    history = []
    eval_mask = g.val_mask if len(g.val_mask) else g.train_mask
    for epoch in range(start_epoch, start_epoch + epochs):
        value, y, grads = objective(model, prop, g, weights, lambda_fair, similarity,
                                    config.weight_decay)
        bias = bias_value(y, similarity) if similarity is not None else float("nan")
        history.append(EpochRecord(epoch, float(value), accuracy(y, g.labels, eval_mask), bias))
        if not np.isfinite(value) or not all(np.all(np.isfinite(x)) for x in grads):
            raise TrainingDiverged(f"non-finite objective at epoch {epoch}", history)
        model.w1, model.w2 = optimizer.step([model.w1, model.w2], list(grads))
        model.touch()
    return history


def train(g: Graph, config: TrainConfig, similarity: SimilarityMatrix | None = None,
          prop: Propagation | None = None, weights=None) -> TrainResult:
    """Full-batch training from a seeded initialization."""
    if len(g.train_mask) == 0:
        raise ValueError("graph has no training nodes")
    if config.lambda_fair and similarity is None:
        raise ValueError("fairness-regularized training needs a similarity matrix")
    prop = prop or Propagation.of(g)
    model = GcnModel.init(g.features.shape[1], config.hidden, g.num_classes, config.seed)
    optimizer = make_optimizer(config)
    history = _run_epochs(model, prop, g, config, config.epochs, weights,
                          config.lambda_fair, similarity, optimizer)
    return TrainResult(model, forward(model, prop), history, optimizer)


def fine_tune(result: TrainResult, g_prime: Graph, weights, epochs: int,
              config: TrainConfig, similarity: SimilarityMatrix | None = None,
              prop: Propagation | None = None,
              learning_rate: float | None = None) -> TrainResult:
    """Continue training a copy of ``result.model`` on ``g_prime`` with the
    reweighted loss only (no fairness regularizer).

    The optimizer state is carried over so that fine-tuning is a true
    continuation of the earlier run; ``learning_rate`` optionally replaces
    its step size for this phase.
    """
    prop = prop or Propagation.of(g_prime)
    model = result.model.copy()
    optimizer = copy.deepcopy(result.optimizer) if result.optimizer is not None \
        else make_optimizer(config)
    if learning_rate is not None:
        if learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        optimizer.lr = learning_rate
    start = len(result.history)
    history = _run_epochs(model, prop, g_prime, config, epochs, weights, 0.0,
                          similarity, optimizer, start_epoch=start)
    return TrainResult(model, forward(model, prop), history, optimizer)


def fine_tune_epochs(s: float, vanilla_epochs: int) -> int:
    """e_re = round(s · e_va), rounding halves up."""
    return int(math.floor(s * vanilla_epochs + 0.5))
