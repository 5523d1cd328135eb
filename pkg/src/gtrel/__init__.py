"""Dual-encoder relation classifier with dependency-neighbor attention.

A text span is encoded twice from one shared embedding: a standard
full-attention encoder produces the sentence representation and a
neighbor-attention encoder (attention restricted to each token's dependency
neighbors) produces pooled entity representations; a small head classifies
the relation. Built on a float64 define-by-run autodiff core so every
gradient is checkable against central differences.
"""

from .attention import (
    AttentionParams,
    NeighborMask,
    apply_head_split,
    neighbor_attention,
    self_attention,
)
from .autodiff import Tensor, grad_check, no_grad
from .checkpoint import load_model, save_model
from .data import (
    Entity,
    NeighborGraph,
    RelationInstance,
    Vocab,
    build_model_inputs,
    build_neighbors,
    collapse_to_binary,
    expand_entities,
    load_dataset,
    save_dataset,
    shortest_path,
)
from .encoder import EncoderConfig, embed, graph_encode, transformer_encode
from .errors import GtrelError
from .experiments import kfold, paired_t_test, significance_test, sweep_neighbor_cap
from .metrics import evaluate_model, metrics_from_predictions
from .model import Model, ModelConfig, init_model, loss_and_grads
from .synth import SyntheticSpec, generate_synthetic
from .training import TrainSpec, train

__version__ = "0.1.0"

__all__ = [
    "AttentionParams",
    "EncoderConfig",
    "Entity",
    "GtrelError",
    "Model",
    "ModelConfig",
    "NeighborGraph",
    "NeighborMask",
    "RelationInstance",
    "SyntheticSpec",
    "Tensor",
    "TrainSpec",
    "Vocab",
    "apply_head_split",
    "build_model_inputs",
    "build_neighbors",
    "collapse_to_binary",
    "embed",
    "evaluate_model",
    "expand_entities",
    "generate_synthetic",
    "grad_check",
    "graph_encode",
    "init_model",
    "kfold",
    "load_dataset",
    "load_model",
    "loss_and_grads",
    "metrics_from_predictions",
    "neighbor_attention",
    "no_grad",
    "paired_t_test",
    "save_dataset",
    "save_model",
    "self_attention",
    "shortest_path",
    "significance_test",
    "sweep_neighbor_cap",
    "train",
    "transformer_encode",
]
