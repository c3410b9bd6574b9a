"""Fairness-aware loss reweighting as a small convex program.

    minimize   Σ_v w_v c_bias_v
    subject to Σ_v w_v² ≤ α n_l
               Σ_v w_v c_util_v ≤ β Σ_v max(c_util_v, 0)
               −1 ≤ w_v ≤ 1

solved by projected gradient steps, each projection onto the intersection
computed with Dykstra's cyclic algorithm.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class QclpError(ValueError):
    pass


@dataclass(frozen=True)
class QclpProblem:
    c_bias: np.ndarray
    c_util: np.ndarray
    alpha: float
    beta: float
    node_ids: np.ndarray | None = None

    def __post_init__(self):
        c_bias = np.asarray(self.c_bias, dtype=np.float64)
        c_util = np.asarray(self.c_util, dtype=np.float64)
        if c_bias.shape != c_util.shape or c_bias.ndim != 1:
            raise QclpError("c_bias and c_util must be vectors of equal length")
        if self.alpha <= 0:
            raise QclpError("alpha must be > 0")
        if self.beta < 0:
            raise QclpError("beta must be >= 0")
        if not (np.all(np.isfinite(c_bias)) and np.all(np.isfinite(c_util))):
            raise QclpError("non-finite coefficients")
        object.__setattr__(self, "c_bias", c_bias)
        object.__setattr__(self, "c_util", c_util)

    @property
    def n_l(self) -> int:
        return self.c_bias.size

    @property
    def radius_sq(self) -> float:
        return self.alpha * self.n_l

    @property
    def util_budget(self) -> float:
        return self.beta * float(np.sum(np.maximum(self.c_util, 0.0)))


def build_problem(i_bias, i_util, alpha: float = 0.9, beta: float = 0.1) -> QclpProblem:
    """Assemble the program from two influence vectors over the same nodes."""
    if not np.array_equal(i_bias.node_ids, i_util.node_ids):
        raise QclpError("influence vectors cover different training nodes")
    return QclpProblem(i_bias.values, i_util.values, alpha, beta,
                       np.asarray(i_bias.node_ids).copy())


@dataclass
class Feasibility:
    ball_residual: float
    util_residual: float
    box_violations: int

    def ok(self, tol: float) -> bool:
        return self.ball_residual <= tol and self.util_residual <= tol and self.box_violations == 0


def check_feasible(problem: QclpProblem, w, tol: float = 0.0) -> Feasibility:
    w = np.asarray(w, dtype=np.float64)
    ball = max(0.0, float(w @ w) - problem.radius_sq)
    util = max(0.0, float(w @ problem.c_util) - problem.util_budget)
    box = int(np.sum((w < -1.0 - tol) | (w > 1.0 + tol)))
    return Feasibility(ball, util, box)


@dataclass
class QclpSolution:
    weights: np.ndarray
    objective: float
    feasibility: Feasibility
    iterations: int
    converged: bool


# -------------------------------------------------------------- projections

def _project_ball(x, radius_sq):
    sq = x @ x
    return x if sq <= radius_sq else x * np.sqrt(radius_sq / sq)


def _project_halfspace(x, u, b, u_sq):
    excess = x @ u - b
    return x if excess <= 0 or u_sq == 0 else x - (excess / u_sq) * u


def _project_box(x):
    return np.clip(x, -1.0, 1.0)


def project(problem: QclpProblem, z: np.ndarray, tol: float = 1e-13,
            max_cycles: int = 10_000) -> np.ndarray:
    """Euclidean projection of z onto the feasible set (Dykstra)."""
    u, b = problem.c_util, problem.util_budget
    u_sq = float(u @ u)
    projs = (lambda x: _project_ball(x, problem.radius_sq),
             lambda x: _project_halfspace(x, u, b, u_sq),
             _project_box)
    x = np.asarray(z, dtype=np.float64).copy()
    incs = [np.zeros_like(x) for _ in projs]
    for _ in range(max_cycles):
        prev = x
        for k, proj in enumerate(projs):
            y = proj(x + incs[k])
            incs[k] = x + incs[k] - y
            x = y
        if np.max(np.abs(x - prev)) <= tol:
            break
    return x


def restore_feasible(problem: QclpProblem, w: np.ndarray) -> np.ndarray:
    """Shrink w toward the origin (always feasible) until every constraint holds."""
    t = 1.0
    sq = float(w @ w)
    if sq > problem.radius_sq:
        t = min(t, np.sqrt(problem.radius_sq / sq))
    top = float(np.max(np.abs(w), initial=0.0))
    if top > 1.0:
        t = min(t, 1.0 / top)
    dot = float(w @ problem.c_util)
    if dot > problem.util_budget:
        t = min(t, problem.util_budget / dot)
    if t == 1.0 and check_feasible(problem, w).ok(0.0):
        return w
    # scaling can land a hair outside in floating point; nudge inward
    for k in range(64):
        cand = w * t
        if check_feasible(problem, cand).ok(0.0):
            return cand
        t *= 1.0 - 2.0 ** (k - 52)
    return np.zeros_like(w)


def objective(problem: QclpProblem, w) -> float:
    return float(problem.c_bias @ np.asarray(w, dtype=np.float64))


def solve(problem: QclpProblem, tol: float = 1e-9, max_iter: int = 5000,
          step: float | None = None) -> QclpSolution:
    """Projected-gradient descent from w = 0; returns the best feasible iterate."""
    c = problem.c_bias
    w = np.zeros(problem.n_l)
    best_w, best_obj = w.copy(), 0.0
    cnorm = float(np.linalg.norm(c))
    if cnorm == 0.0:
        return QclpSolution(w, 0.0, check_feasible(problem, w), 0, True)
    eta = step if step is not None else np.sqrt(problem.radius_sq) / cnorm
    scale = max(1.0, np.sqrt(problem.radius_sq))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w_new = project(problem, w - eta * c)
        cand = restore_feasible(problem, w_new)
        obj = objective(problem, cand)
        if obj < best_obj:
            best_w, best_obj = cand, obj
        moved = float(np.linalg.norm(w_new - w))
        w = w_new
        if moved <= tol * scale:
            converged = True
            break
    if not converged:
        log.warning("QCLP solver hit max_iter=%d", max_iter)
    return QclpSolution(best_w, best_obj, check_feasible(problem, best_w), it, converged)


# ---------------------------------------------------------------------- I/O

def write_weights(path, node_ids, weights):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["node_id", "w"])
        for node, w in zip(np.asarray(node_ids).tolist(), np.asarray(weights).tolist()):
            out.writerow([int(node), repr(float(w))])


def read_weights(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([int(r["node_id"]) for r in rows], dtype=np.int64),
            np.array([float(r["w"]) for r in rows]))
