"""Individual-fairness bias Tr(Yᵀ L_S Y) and its gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BiasReport:
    value: float
    normalized_value: float


def bias_value(y: np.ndarray, similarity) -> float:
    """½ Σ_ij S_ij ‖Y_i − Y_j‖², which equals Tr(Yᵀ L_S Y) for symmetric S."""
    s = similarity.s.tocoo()
    diff = y[s.row] - y[s.col]
    return float(0.5 * np.sum(s.data * np.einsum("ij,ij->i", diff, diff)))


def bias(y: np.ndarray, similarity) -> BiasReport:
    value = bias_value(y, similarity)
    return BiasReport(value=value, normalized_value=value / y.shape[0])


def bias_grad_outputs(y: np.ndarray, similarity) -> np.ndarray:
    """∂f_bias/∂Y = 2 L_S Y."""
    return 2.0 * np.asarray(similarity.laplacian @ y)
