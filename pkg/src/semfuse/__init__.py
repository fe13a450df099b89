"""Semantic-driven infrared/visible image fusion.

A multi-scale attention fusion network trained in two phases: a pixel-rule
warm start, then joint training with a segmentation network under
cross-entropy plus a correlation regularizer. Ships the fusion/segmentation
evaluation metrics and the full ablation matrix.
"""

__version__ = "0.1.0"

from .core import (
    AttentionVariant,
    ImagePair,
    LabelPalette,
    TrainConfig,
    WarmStartRule,
    mfnet_palette,
    rgb_to_luma,
    synthetic_palette,
    validate_pair,
)
from .data import SynthSpec, generate_synthetic, scan_dataset
from .fusion_net import FusionNet, fuse_pair
from .seg_net import SegNet, build_seg_net, predict
from .training import run_pipeline, semantic_train, warm_start

__all__ = [
    "AttentionVariant",
    "FusionNet",
    "ImagePair",
    "LabelPalette",
    "SegNet",
    "SynthSpec",
    "TrainConfig",
    "WarmStartRule",
    "build_seg_net",
    "fuse_pair",
    "generate_synthetic",
    "mfnet_palette",
    "predict",
    "rgb_to_luma",
    "run_pipeline",
    "scan_dataset",
    "semantic_train",
    "synthetic_palette",
    "validate_pair",
    "warm_start",
]
