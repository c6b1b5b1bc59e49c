"""Link prediction over hyper-relational temporal knowledge graphs."""

from .data import Dataset, HyperFact, LpQuery, Qualifier, TiFact, augment_inverse, derive_queries, load_dataset
from .evaluation import FilterSet, RankReport, evaluate, filtered_rank
from .model import PRESETS, GraphContext, HypeTKG, ModelConfig, apply_preset
from .training import TrainConfig, bce_loss, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FilterSet",
    "GraphContext",
    "HyperFact",
    "HypeTKG",
    "LpQuery",
    "ModelConfig",
    "PRESETS",
    "Qualifier",
    "RankReport",
    "TiFact",
    "TrainConfig",
    "apply_preset",
    "augment_inverse",
    "bce_loss",
    "derive_queries",
    "evaluate",
    "filtered_rank",
    "load_dataset",
    "train",
]
