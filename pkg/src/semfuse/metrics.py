"""Evaluation: spatial frequency, average gradient, cumulative curves, and
per-class segmentation scores from an accumulated confusion matrix.

Fusion metrics are computed on [0, 1] images. Much of the fusion literature
reports them on [0, 255]; both SF and AG are linear in pixel scale, so that
convention differs from ours by a constant factor of 255.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import LabelError, ShapeMismatchError


def spatial_frequency(img: np.ndarray) -> float:
    """SF = sqrt(RF^2 + CF^2); RF/CF are RMS horizontal/vertical neighbor
    differences, averaged over the positions where a difference exists."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeMismatchError(f"need a (H>=2, W>=2) image, got {img.shape}")
    rf2 = np.mean((img[:, 1:] - img[:, :-1]) ** 2)
    cf2 = np.mean((img[1:, :] - img[:-1, :]) ** 2)
    return float(np.sqrt(rf2 + cf2))


def average_gradient(img: np.ndarray) -> float:
    """AG = mean over interior pixels of sqrt((dx^2 + dy^2) / 2), with forward
    differences dx, dy."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeMismatchError(f"need a (H>=2, W>=2) image, got {img.shape}")
    dx = img[:-1, 1:] - img[:-1, :-1]
    dy = img[1:, :-1] - img[:-1, :-1]
    return float(np.mean(np.sqrt((dx**2 + dy**2) / 2)))


def cumulative_curve(values: list[float] | np.ndarray) -> list[tuple[float, float]]:
    """Sorted values v1 <= ... <= vn mapped to ((k/n, v_k)): the fraction of
    items with value no more than y."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    n = vals.size
    if n == 0:
        raise ValueError("cumulative_curve needs a nonempty list")
    return [((k + 1) / n, float(v)) for k, v in enumerate(vals)]


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns are prediction."""

    class_count: int
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.class_count, self.class_count), dtype=np.int64)

    def accumulate(self, pred: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        if pred.shape != truth.shape:
            raise ShapeMismatchError(f"pred {pred.shape} vs truth {truth.shape}")
        k = self.class_count
        if pred.min() < 0 or pred.max() >= k or truth.min() < 0 or truth.max() >= k:
            raise LabelError(f"class index outside [0, {k})")
        flat = truth.astype(np.int64).ravel() * k + pred.astype(np.int64).ravel()
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self


def class_scores(cm: ConfusionMatrix, scored_classes: list[int]) -> dict:
    """Per-class Acc (recall) and IoU plus their means over the scored classes.

    Classes with zero ground-truth and zero predicted pixels are left out of
    the means rather than scored as 0/0.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fn = counts.sum(axis=1) - tp
    fp = counts.sum(axis=0) - tp
    acc, iou = {}, {}
    mean_acc, mean_iou = [], []
    for k in scored_classes:
        present = tp[k] + fn[k] + fp[k] > 0
        if not present:
            continue
        acc[k] = tp[k] / (tp[k] + fn[k]) if tp[k] + fn[k] > 0 else 0.0
        iou[k] = tp[k] / (tp[k] + fp[k] + fn[k])
        mean_acc.append(acc[k])
        mean_iou.append(iou[k])
    return {
        "acc": acc,
        "iou": iou,
        "mAcc": float(np.mean(mean_acc)) if mean_acc else float("nan"),
        "mIoU": float(np.mean(mean_iou)) if mean_iou else float("nan"),
    }


@dataclass
class EvalReport:
    """All evaluation outputs for one run: per-image fusion statistics,
    per-class segmentation scores, and the cumulative-curve points."""

    image_ids: list[str] = field(default_factory=list)
    sf: list[float] = field(default_factory=list)
    ag: list[float] = field(default_factory=list)
    corr_ir: list[float] = field(default_factory=list)
    corr_vis: list[float] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    acc: dict[int, float] = field(default_factory=dict)
    iou: dict[int, float] = field(default_factory=dict)
    m_acc: float = float("nan")
    m_iou: float = float("nan")

    def sf_curve(self) -> list[tuple[float, float]]:
        return cumulative_curve(self.sf)

    def ag_curve(self) -> list[tuple[float, float]]:
        return cumulative_curve(self.ag)

    def to_text(self) -> str:
        """Key-value report, one entry per line."""
        lines = [f"images={len(self.image_ids)}"]
        if self.sf:
            lines.append(f"sf_mean={np.mean(self.sf):.6f}")
            lines.append(f"ag_mean={np.mean(self.ag):.6f}")
            lines.append(f"corr_ir_mean={np.mean(self.corr_ir):.6f}")
            lines.append(f"corr_vis_mean={np.mean(self.corr_vis):.6f}")
        for k in sorted(self.acc):
            name = self.class_names[k] if k < len(self.class_names) else str(k)
            lines.append(f"acc[{name}]={self.acc[k]:.4f}")
            lines.append(f"iou[{name}]={self.iou[k]:.4f}")
        if self.acc:
            lines.append(f"mAcc={self.m_acc:.4f}")
            lines.append(f"mIoU={self.m_iou:.4f}")
        return "\n".join(lines) + "\n"

    def class_table(self) -> str:
        """CSV table: one row per scored class, trailing mAcc/mIoU rows."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["class", "acc", "iou"])
        for k in sorted(self.acc):
            name = self.class_names[k] if k < len(self.class_names) else str(k)
            writer.writerow([name, f"{self.acc[k]:.6f}", f"{self.iou[k]:.6f}"])
        writer.writerow(["mAcc", f"{self.m_acc:.6f}", ""])
        writer.writerow(["mIoU", "", f"{self.m_iou:.6f}"])
        return buf.getvalue()


def curve_csv(points: list[tuple[float, float]]) -> str:
    """Two-column CSV of cumulative-curve points for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["x", "y"])
    for x, y in points:
        writer.writerow([f"{x:.6f}", f"{y:.6f}"])
    return buf.getvalue()
