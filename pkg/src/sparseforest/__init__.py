"""Differentiable decision forests with sparse feature attention."""

__version__ = "0.1.0"

from .attention import (AttentionKind, AttentionMapper, SimplexPoint, map_backward, map_forward,
                        sparsity_fraction)
from .data import FeatureMatrix, Standardizer, TargetVector, Task, load_csv, make_batches, split
from .errors import (ConfigError, DimensionError, FormatError, ForestError, InputError, NumericError,
                     ParseError)
from .forest import (ForestGradients, ForestParams, GateParams, TreeParams, forest_backward, forest_forward,
                     gate_forward, leaf_probabilities, tree_forward)
from .importance import (ImportanceVector, InitConfig, InitMode, estimate_importance, init_attention,
                         init_thresholds_and_leaves)
from .losses import Loss, LossKind, compute_loss
from .modelio import load_model, save_model
from .optim import OptimizerConfig, OptimizerKind, OptimizerState, apply_update, init_state
from .trainer import EnsembleLossMode, TrainConfig, TrainReport, evaluate, predict, train

__all__ = [
    "AttentionKind",
    "AttentionMapper",
    "SimplexPoint",
    "map_backward",
    "map_forward",
    "sparsity_fraction",
    "FeatureMatrix",
    "Standardizer",
    "TargetVector",
    "Task",
    "load_csv",
    "make_batches",
    "split",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "ForestError",
    "InputError",
    "NumericError",
    "ParseError",
    "ForestGradients",
    "ForestParams",
    "GateParams",
    "TreeParams",
    "forest_backward",
    "forest_forward",
    "gate_forward",
    "leaf_probabilities",
    "tree_forward",
    "ImportanceVector",
    "InitConfig",
    "InitMode",
    "estimate_importance",
    "init_attention",
    "init_thresholds_and_leaves",
    "Loss",
    "LossKind",
    "compute_loss",
    "load_model",
    "save_model",
    "OptimizerConfig",
    "OptimizerKind",
    "OptimizerState",
    "apply_update",
    "init_state",
    "EnsembleLossMode",
    "TrainConfig",
    "TrainReport",
    "evaluate",
    "predict",
    "train",
]
