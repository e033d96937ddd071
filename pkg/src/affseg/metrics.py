"""Evaluation metrics (DSC, mIoU) and the serializable report.

Both metrics are computed per 2D image and averaged image-wise over the set;
the class pair "both masks empty" scores 1.0 by convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .config import FORMAT_VERSION
from .errors import ShapeError


def _counts(pred: np.ndarray, gt: np.ndarray, class_id: int) -> tuple[int, int, int]:
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred == class_id
    g = gt == class_id
    inter = int(np.count_nonzero(p & g))
    return inter, int(np.count_nonzero(p)), int(np.count_nonzero(g))


def dsc(pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    """2|P∩G| / (|P| + |G|); 1.0 when both sets are empty."""
    inter, np_, ng = _counts(pred, gt, class_id)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def iou(pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    inter, np_, ng = _counts(pred, gt, class_id)
    union = np_ + ng - inter
    if union == 0:
        return 1.0
    return inter / union


def miou(pred: np.ndarray, gt: np.ndarray, class_ids) -> float:
    return float(np.mean([iou(pred, gt, c) for c in class_ids]))


@dataclass
class MetricsReport:
    class_names: list[str]
    per_class_dsc: list[float]
    per_class_iou: list[float]
    mean_dsc: float = field(default=0.0)
    mean_iou: float = field(default=0.0)

    def __post_init__(self):
        if self.per_class_dsc:
            self.mean_dsc = float(np.mean(self.per_class_dsc))
            self.mean_iou = float(np.mean(self.per_class_iou))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def table(self) -> str:
        """Aligned text table with percentages at 2 decimals."""
        rows = [f"{'class':<12} {'DSC(%)':>8} {'mIoU(%)':>8}"]
        for name, d, i in zip(self.class_names, self.per_class_dsc, self.per_class_iou):
            rows.append(f"{name:<12} {100 * d:>8.2f} {100 * i:>8.2f}")
        rows.append(f"{'mean':<12} {100 * self.mean_dsc:>8.2f} {100 * self.mean_iou:>8.2f}")
        return "\n".join(rows)


def report_from_masks(preds: list[np.ndarray], gts: list[np.ndarray],
                      num_classes: int) -> MetricsReport:
    """Image-wise averaged per-class metrics over the foreground classes.

    ``num_classes`` counts mask labels including background; background
    (class 0) is excluded from the report. For a binary model pass 2.
    """
    fg = list(range(1, max(num_classes, 2)))
    per_dsc = [float(np.mean([dsc(p, g, c) for p, g in zip(preds, gts)])) for c in fg]
    per_iou = [float(np.mean([iou(p, g, c) for p, g in zip(preds, gts)])) for c in fg]
    return MetricsReport(class_names=[f"class_{c}" for c in fg],
                         per_class_dsc=per_dsc, per_class_iou=per_iou)


def logits_to_mask(logits: np.ndarray) -> np.ndarray:
    """[K,H,W] or [B,K,H,W] logits -> integer masks (argmax; sigmoid>0.5 if K==1)."""
    if logits.ndim == 3:
        return logits_to_mask(logits[None])[0]
    if logits.shape[1] == 1:
        return (logits[:, 0] > 0).astype(np.int64)
    return logits.argmax(axis=1).astype(np.int64)
