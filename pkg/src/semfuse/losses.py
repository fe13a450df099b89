"""Objective terms: warm-start targets, correlation regularizer, masked
cross-entropy, and the combined semantic-training loss.

All functions accept torch tensors and stay differentiable. Image tensors may
be (H, W), (B, H, W) or (B, 1, H, W); statistics that are defined per image
(the correlation) are computed per image and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .core import MaskError, NonFiniteLossError, ShapeMismatchError

CORR_EPS = 1e-8      # inside each standard deviation; guards constant images
REG_FLOOR = 1e-3     # clamp on the correlation sum; keeps l_reg finite


@dataclass
class LossValue:
    """A scalar objective with an optional named breakdown (e.g. sem, reg)."""

    value: torch.Tensor
    components: dict[str, torch.Tensor] = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value.detach())

    def item(self) -> float:
        return float(self)


def _flatten_images(img: torch.Tensor) -> torch.Tensor:
    """Normalize (H,W) / (B,H,W) / (B,1,H,W) to (B, H*W)."""
    if img.ndim == 2:
        return img.reshape(1, -1)
    if img.ndim == 3:
        return img.reshape(img.shape[0], -1)
    if img.ndim == 4 and img.shape[1] == 1:
        return img.reshape(img.shape[0], -1)
    raise ShapeMismatchError(f"expected single-channel image tensor, got {tuple(img.shape)}")


def _check_same_shape(*imgs: torch.Tensor) -> None:
    shapes = {tuple(i.shape) for i in imgs}
    if len(shapes) > 1:
        raise ShapeMismatchError(f"image shapes differ: {sorted(shapes)}")


def l_ws_average(fused: torch.Tensor, ir: torch.Tensor, vis: torch.Tensor) -> LossValue:
    """Mean absolute deviation of the fused image from (ir + vis) / 2."""
    _check_same_shape(fused, ir, vis)
    value = (fused - (ir + vis) / 2).abs().mean()
    return LossValue(value)


def l_ws_max(fused: torch.Tensor, ir: torch.Tensor, vis: torch.Tensor) -> LossValue:
    """Mean absolute deviation of the fused image from max(ir, vis)."""
    _check_same_shape(fused, ir, vis)
    value = (fused - torch.maximum(ir, vis)).abs().mean()
    return LossValue(value)


def corr(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pearson correlation over all pixels, per image, averaged over the batch.

    Standard deviations carry an internal epsilon, so constant images yield a
    correlation of ~0 instead of dividing by zero.
    """
    _check_same_shape(a, b)
    fa, fb = _flatten_images(a), _flatten_images(b)
    fa = fa - fa.mean(dim=1, keepdim=True)
    fb = fb - fb.mean(dim=1, keepdim=True)
    cov = (fa * fb).mean(dim=1)
    sa = torch.sqrt(fa.pow(2).mean(dim=1) + CORR_EPS)
    sb = torch.sqrt(fb.pow(2).mean(dim=1) + CORR_EPS)
    return (cov / (sa * sb)).mean()


def l_reg(fused: torch.Tensor, ir: torch.Tensor, vis: torch.Tensor) -> LossValue:
    """Reciprocal of the summed fused-to-source correlations.

    The denominator is clamped below at REG_FLOOR so the loss and its gradient
    stay bounded when the fused image decorrelates from both sources.
    """
    for t in (fused, ir, vis):
        if not torch.isfinite(t).all():
            raise NonFiniteLossError("l_reg inputs contain non-finite values")
    denom = corr(ir, fused) + corr(vis, fused)
    value = 1.0 / denom.clamp_min(REG_FLOOR)
    return LossValue(value)


def l_sem(logits: torch.Tensor, labels: torch.Tensor,
          mask: frozenset[int] | set[int] = frozenset()) -> LossValue:
    """Mean per-pixel cross-entropy, excluding pixels whose label is masked.

    Masked pixels leave both numerator and denominator (the class-removal
    ablation); the logits keep all K columns.
    """
    if logits.ndim == 3:
        logits = logits[None]
    if labels.ndim == 2:
        labels = labels[None]
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise ShapeMismatchError(
            f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}"
        )
    per_pixel = F.cross_entropy(logits, labels, reduction="none")
    keep = torch.ones_like(labels, dtype=torch.bool)
    for k in mask:
        keep &= labels != k
    if not keep.any():
        raise MaskError("class mask removes every labelled pixel")
    value = per_pixel[keep].mean()
    return LossValue(value)


def l_st(logits: torch.Tensor, labels: torch.Tensor, fused: torch.Tensor,
         ir: torch.Tensor, vis: torch.Tensor, lambda_reg: float,
         mask: frozenset[int] | set[int] = frozenset()) -> LossValue:
    """Semantic-training loss: cross-entropy plus lambda * correlation term."""
    sem = l_sem(logits, labels, mask)
    reg = l_reg(fused, ir, vis)
    value = sem.value + lambda_reg * reg.value
    return LossValue(value, components={"sem": sem.value, "reg": reg.value})
