"""Fairness/edge-privacy trade-off laboratory for small GCNs."""

from .graph import Graph, SbmParams, generate_sbm, jaccard_similarity, load_dataset
from .gcn import GcnModel, Propagation, TrainConfig, fine_tune, train

__all__ = ["Graph", "SbmParams", "generate_sbm", "jaccard_similarity", "load_dataset",
           "GcnModel", "Propagation", "TrainConfig", "fine_tune", "train"]
