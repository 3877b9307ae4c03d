"""Weight pruning under cardinality constraints via surrogate Lagrangian relaxation."""
from .admm import AdmmConfig, run_admm
from .autodiff import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import Dataset, load_idx, make_synthetic, read_idx, write_idx
from .diagnostics import (
    MetricsSink,
    RunReport,
    admm_dual_overestimate,
    estimate_dual_value,
    export_sparsity_heatmap,
    read_metrics,
    slr_dual_overestimate,
    soc_recurs,
)
from .estimator import PruningClassifier
from .exceptions import (
    CheckpointError,
    ConfigError,
    IdxFormatError,
    InfeasibleError,
    NonFiniteError,
    ShapeError,
)
from .lagrangian import ModelObjective, QuadraticObjective, augmented_lagrangian
from .models import LeNet5, MLP, build_model, evaluate_accuracy
from .optim import OptimizerConfig
from .pipeline import PruneOutcome, accuracy_at_budget, hardprune, magnitude_prune, masked_retrain
from .slr import SlrConfig, StopCriteria, alpha_schedule, run_slr
from .sparsity import SparsityPlan, compression_rate, project_cardinality

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "IdxFormatError",
    "InfeasibleError",
    "LeNet5",
    "MLP",
    "MetricsSink",
    "ModelObjective",
    "NonFiniteError",
    "OptimizerConfig",
    "PruneOutcome",
    "PruningClassifier",
    "QuadraticObjective",
    "RunConfig",
    "RunReport",
    "ShapeError",
    "SlrConfig",
    "SparsityPlan",
    "StopCriteria",
    "Tape",
    "Tensor",
    "accuracy_at_budget",
    "admm_dual_overestimate",
    "alpha_schedule",
    "augmented_lagrangian",
    "build_model",
    "compression_rate",
    "estimate_dual_value",
    "evaluate_accuracy",
    "export_sparsity_heatmap",
    "hardprune",
    "load_checkpoint",
    "load_config",
    "load_idx",
    "magnitude_prune",
    "make_synthetic",
    "masked_retrain",
    "project_cardinality",
    "read_idx",
    "read_metrics",
    "run_admm",
    "run_slr",
    "save_checkpoint",
    "slr_dual_overestimate",
    "soc_recurs",
    "write_idx",
]
