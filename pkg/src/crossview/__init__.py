"""Cross-view ground-to-aerial image retrieval with generative cross-modal
knowledge and recurrent cross-attention."""

__version__ = "0.1.0"

from .config import ModelConfig, TrainConfig, ablation_variants, parse_config, preset
from .data import (
    DatasetSplit,
    ImagePair,
    SyntheticSpec,
    generate_synthetic,
    load_cvusa_style,
    load_synthetic,
    polar_transform,
    save_synthetic,
)
from .evaluation import complexity_report, extract_all_descriptors, recall_at_k
from .losses import LossBreakdown, descriptor, total_loss, triplet_loss
from .model import CrossViewNet, build_model
from .training import Checkpoint, fit, mine_triplets, train_step

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "ablation_variants",
    "parse_config",
    "preset",
    "DatasetSplit",
    "ImagePair",
    "SyntheticSpec",
    "generate_synthetic",
    "load_cvusa_style",
    "load_synthetic",
    "polar_transform",
    "save_synthetic",
    "complexity_report",
    "extract_all_descriptors",
    "recall_at_k",
    "LossBreakdown",
    "descriptor",
    "total_loss",
    "triplet_loss",
    "CrossViewNet",
    "build_model",
    "Checkpoint",
    "fit",
    "mine_triplets",
    "train_step",
]
