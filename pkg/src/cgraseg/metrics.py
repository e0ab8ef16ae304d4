"""Pooled confusion matrix, pixel accuracy and mean IoU with an ignore label."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

IGNORE_LABEL = 255


class EmptyMatrixError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns predictions."""

    num_classes: int = 19
    ignore_label: int = IGNORE_LABEL
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        elif self.counts.shape != (self.num_classes, self.num_classes):
            raise ValueError("counts must be num_classes x num_classes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, pred, gt) -> "ConfusionMatrix":
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        keep = gt != self.ignore_label
        p, g = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
        if p.size and (p.min() < 0 or p.max() >= self.num_classes):
            raise ValueError("prediction class id out of range")
        if g.size and (g.min() < 0 or g.max() >= self.num_classes):
            raise ValueError("ground-truth class id out of range")
        n = self.num_classes
        self.counts += np.bincount(g * n + p, minlength=n * n).reshape(n, n)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if (other.num_classes, other.ignore_label) != (self.num_classes, self.ignore_label):
            raise ValueError("cannot merge matrices with different class setups")
        return ConfusionMatrix(self.num_classes, self.ignore_label, self.counts + other.counts)

    def _require_data(self):
        if self.total == 0:
            raise EmptyMatrixError("confusion matrix holds no pixels")

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class never occurs in either map."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, tp / union, np.nan)


def update_confusion(cm: ConfusionMatrix, pred, gt) -> ConfusionMatrix:
    return cm.update(pred, gt)


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    cm._require_data()
    return float(np.trace(cm.counts) / cm.total)


def mean_iou(cm: ConfusionMatrix) -> float:
    cm._require_data()
    return float(np.nanmean(cm.per_class_iou()))


def metrics_json(cm: ConfusionMatrix) -> str:
    per_class = [None if np.isnan(v) else float(v) for v in cm.per_class_iou()]
    doc = {"pixel_accuracy": pixel_accuracy(cm), "miou": mean_iou(cm), "per_class_iou": per_class}
    return json.dumps(doc, indent=1) + "\n"
