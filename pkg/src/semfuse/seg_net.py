"""Small encoder-decoder segmentation network (overall stride 8).

Stands in for a large segmentation backbone at desk scale: any differentiable
dense classifier works for the joint training strategy, which only needs
gradients to flow from the cross-entropy back into the fused image.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ShapeMismatchError, TrainConfig
from .fusion_net import ConvBlock, init_parameters

STRIDE = 8


class SegNet(nn.Module):
    """3-level U-shaped classifier over the (replicated) fused image."""

    def __init__(self, class_count: int, width: float = 1.0, seed: int = 0):
        super().__init__()
        self.class_count = class_count
        self.width = width
        w = max(int(round(16 * width)), 4)
        self.enc0 = ConvBlock(3, w)
        self.enc1 = ConvBlock(w, 2 * w)
        self.enc2 = ConvBlock(2 * w, 4 * w)
        self.bottleneck = ConvBlock(4 * w, 8 * w)
        self.dec2 = ConvBlock(8 * w + 4 * w, 4 * w)
        self.dec1 = ConvBlock(4 * w + 2 * w, 2 * w)
        self.dec0 = ConvBlock(2 * w + w, w)
        self.head = nn.Conv2d(w, class_count, 1)
        init_parameters(self, seed)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) fused image in [0, 1] -> (B, K, H, W) logits."""
        h, w = fused.shape[2:]
        if h % STRIDE or w % STRIDE:
            raise ShapeMismatchError(f"{h}x{w} not divisible by stride {STRIDE}")
        x = fused.expand(-1, 3, -1, -1)
        e0 = self.enc0(x)
        e1 = self.enc1(F.max_pool2d(e0, 2))
        e2 = self.enc2(F.max_pool2d(e1, 2))
        b = self.bottleneck(F.max_pool2d(e2, 2))
        up = lambda t: F.interpolate(t, scale_factor=2, mode="bilinear", align_corners=False)
        d2 = self.dec2(torch.cat([up(b), e2], dim=1))
        d1 = self.dec1(torch.cat([up(d2), e1], dim=1))
        d0 = self.dec0(torch.cat([up(d1), e0], dim=1))
        return self.head(d0)


def build_seg_net(config: TrainConfig) -> SegNet:
    # offset keeps the seg init stream independent of the fusion net's
    return SegNet(config.class_count, config.seg_width, seed=config.seed + 1)


def predict(logits: torch.Tensor | np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lower class index."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().numpy()
    if logits.ndim == 4:  # (B, K, H, W) -> (B, H, W)
        return np.argmax(logits, axis=1)
    return np.argmax(logits, axis=0)
