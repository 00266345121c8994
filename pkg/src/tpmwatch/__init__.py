"""Tree-based progressive regression for watch-time prediction.

Watch time is quantised into ordinal ranks, the ranks are arranged as the
leaves of a binary tree, and one shared-trunk network predicts the
conditional branch probability at every internal node.  See the README for
a tour of the modules.
"""

from .data import Dataset, SyntheticSpec, generate_synthetic, load_csv
from .deconfound import build_partition, predict_deconfounded, train_deconfounded
from .metrics import mae, xauc
from .net import MultiHeadNet, NetConfig, OptimizerConfig
from .ranks import (OrdinalScale, build_balanced_tree, build_linear_tree, build_scale, build_tree,
                    build_tree_from_splits, leaf_of, path_and_labels)
from .tpm import LossWeights, TpmModel, TrainConfig, leaf_distribution, predict, train

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "generate_synthetic",
    "load_csv",
    "build_partition",
    "predict_deconfounded",
    "train_deconfounded",
    "mae",
    "xauc",
    "MultiHeadNet",
    "NetConfig",
    "OptimizerConfig",
    "OrdinalScale",
    "build_balanced_tree",
    "build_linear_tree",
    "build_scale",
    "build_tree",
    "build_tree_from_splits",
    "leaf_of",
    "path_and_labels",
    "LossWeights",
    "TpmModel",
    "TrainConfig",
    "leaf_distribution",
    "predict",
    "train",
]

__version__ = "0.1.0"
