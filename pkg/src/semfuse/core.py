"""Shared data model: images, pairs, palettes, train configuration, validation.

Images are plain numpy arrays: single-channel images are float (H, W) in
[0, 1], RGB images are (H, W, 3) in [0, 1], label maps are integer (H, W).
All value objects here are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ShapeMismatchError(ValueError):
    """Raised when paired arrays disagree on spatial dimensions."""


class PixelRangeError(ValueError):
    """Raised when pixel values leave [0, 1]."""


class LabelError(ValueError):
    """Raised when a label map contains a class index >= class_count."""


class MaskError(ValueError):
    """Raised when a class mask removes every pixel of a batch."""


class NonFiniteLossError(RuntimeError):
    """Raised when a training loss becomes NaN/inf; carries the batch id."""


class EmptyDatasetError(ValueError):
    """Raised when a dataset scan yields no usable pairs."""


class UnreadableFileError(ValueError):
    """Raised when an image file exists but cannot be decoded."""


class ConfigError(ValueError):
    """Raised on malformed or unknown run-config entries."""


class AttentionVariant(str, Enum):
    SLA = "SLA"    # efficient self-attention (the default fusion block)
    CHA = "CHA"    # squeeze-and-excitation channel gating
    SPA = "SPA"    # spatial gating via pooled-channel conv
    NONE = "NONE"  # identity strengthening; block degrades to averaging


class WarmStartRule(str, Enum):
    AVERAGE = "AVERAGE"  # target (ir + vis) / 2
    MAX = "MAX"          # target elementwise max(ir, vis)


def rgb_to_luma(vis_rgb: np.ndarray) -> np.ndarray:
    """Luminance Y = 0.299 R + 0.587 G + 0.114 B, clamped to [0, 1]."""
    if vis_rgb.ndim != 3 or vis_rgb.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) rgb image, got {vis_rgb.shape}")
    r, g, b = LUMA_WEIGHTS
    luma = r * vis_rgb[..., 0] + g * vis_rgb[..., 1] + b * vis_rgb[..., 2]
    return np.clip(luma, 0.0, 1.0).astype(np.float32)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """RGB (H, W, 3) in [0,1] to YCbCr (H, W, 3); Cb/Cr centered at 0.5."""
    y = rgb_to_luma(rgb).astype(np.float64)
    cr = (rgb[..., 0] - y) * 0.713 + 0.5
    cb = (rgb[..., 2] - y) * 0.564 + 0.5
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycbcr: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_ycbcr`, clamped to [0, 1]."""
    y = ycbcr[..., 0]
    cb = ycbcr[..., 1] - 0.5
    cr = ycbcr[..., 2] - 0.5
    r = y + 1.403 * cr
    g = y - 0.714 * cr - 0.344 * cb
    b = y + 1.773 * cb
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class ImagePair:
    """A registered infrared/visible pair with an optional label map.

    ``ir`` is (H, W) in [0, 1]; ``vis_rgb`` is (H, W, 3) in [0, 1]; ``label``
    (when present) is an integer (H, W) map of class indices.
    """

    id: str
    ir: np.ndarray
    vis_rgb: np.ndarray
    label: np.ndarray | None = None

    @cached_property
    def vis_luma(self) -> np.ndarray:
        return rgb_to_luma(self.vis_rgb)

    @property
    def height(self) -> int:
        return self.ir.shape[0]

    @property
    def width(self) -> int:
        return self.ir.shape[1]


@dataclass(frozen=True)
class LabelPalette:
    """Class names for a segmentation label space."""

    class_names: tuple[str, ...]
    ignore_index: int | None = None

    def __post_init__(self):
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def scored_classes(self) -> list[int]:
        """Classes included in mAcc/mIoU: foreground only (class 0 is the
        unlabeled background by convention) and never the ignore_index."""
        skip = {0}
        if self.ignore_index is not None:
            skip.add(self.ignore_index)
        return [k for k in range(self.class_count) if k not in skip]


def mfnet_palette() -> LabelPalette:
    return LabelPalette(
        class_names=(
            "Unlabeled", "Car", "Person", "Bike", "Curve",
            "Car Stop", "Color Cone", "Bump",
        )
    )


def synthetic_palette() -> LabelPalette:
    return LabelPalette(
        class_names=("Background", "Hot Target", "Cold Structure", "Glare Zone")
    )


def palette_for(class_count: int) -> LabelPalette:
    """A sensible palette for a class count: the synthetic names for 4, the
    MFNet names for 8, generic names otherwise."""
    if class_count == 4:
        return synthetic_palette()
    if class_count == 8:
        return mfnet_palette()
    return LabelPalette(class_names=("Background",) + tuple(
        f"Class {k}" for k in range(1, class_count)
    ))


@dataclass(frozen=True)
class TrainConfig:
    """Every knob the pipeline exposes; defaults are desk-scale."""

    scales: int = 3
    base_channels: int = 16
    attention_variant: AttentionVariant = AttentionVariant.SLA
    class_count: int = 4
    seg_width: float = 1.0
    warm_start_rule: WarmStartRule = WarmStartRule.AVERAGE
    lambda_reg: float = 1.0
    class_mask: frozenset[int] = frozenset()
    warm_start_epochs: int = 20
    semantic_epochs: int = 40
    lr_warm: float = 5e-3
    lr_semantic: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    grad_clip: float = 5.0
    skip_warm_start: bool = False
    without_sem: bool = False

    def __post_init__(self):
        if not 2 <= self.scales <= 4:
            raise ConfigError(f"scales must be in [2, 4], got {self.scales}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.lambda_reg < 0:
            raise ConfigError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.warm_start_epochs < 1 or self.semantic_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        if any(k < 0 or k >= self.class_count for k in self.class_mask):
            raise ConfigError("class_mask entries must lie in [0, class_count)")
        # frozenset survives dataclasses.replace on a plain set argument
        object.__setattr__(self, "class_mask", frozenset(self.class_mask))
        object.__setattr__(self, "attention_variant", AttentionVariant(self.attention_variant))
        object.__setattr__(self, "warm_start_rule", WarmStartRule(self.warm_start_rule))

    @property
    def pool_divisor(self) -> int:
        return 2 ** (self.scales - 1)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


def _check_image(img: np.ndarray, what: str) -> None:
    if not np.isfinite(img).all():
        raise PixelRangeError(f"{what} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise PixelRangeError(
            f"{what} pixels outside [0, 1]: min={img.min():.4g} max={img.max():.4g}"
        )


def validate_pair(pair: ImagePair, config: TrainConfig) -> ImagePair:
    """Check every ImagePair invariant under ``config``; return the pair unchanged.

    Idempotent: a validated pair revalidates to the identical object.
    """
    ir, vis = pair.ir, pair.vis_rgb
    if ir.ndim != 2:
        raise ShapeMismatchError(f"{pair.id}: ir must be (H, W), got {ir.shape}")
    if vis.ndim != 3 or vis.shape[2] != 3:
        raise ShapeMismatchError(f"{pair.id}: vis must be (H, W, 3), got {vis.shape}")
    if ir.shape != vis.shape[:2]:
        raise ShapeMismatchError(
            f"{pair.id}: ir {ir.shape} and vis {vis.shape[:2]} sizes differ"
        )
    h, w = ir.shape
    d = config.pool_divisor
    if h < 8 or w < 8 or h % d or w % d:
        raise ShapeMismatchError(
            f"{pair.id}: size {h}x{w} must be >= 8 and divisible by {d} "
            f"(scales={config.scales})"
        )
    _check_image(ir, f"{pair.id}: ir")
    _check_image(vis, f"{pair.id}: vis")
    if pair.label is not None:
        label = pair.label
        if label.shape != (h, w):
            raise ShapeMismatchError(
                f"{pair.id}: label {label.shape} does not match image {ir.shape}"
            )
        if not np.issubdtype(label.dtype, np.integer):
            raise LabelError(f"{pair.id}: label dtype {label.dtype} is not integral")
        if label.min() < 0 or label.max() >= config.class_count:
            raise LabelError(
                f"{pair.id}: label values in [{label.min()}, {label.max()}] "
                f"exceed class_count={config.class_count}"
            )
    return pair
