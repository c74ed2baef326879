"""Confusion accumulation and mean Intersection-over-Union."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError
from .inference import UNKNOWN_LABEL


@dataclass
class ConfusionMatrix:
    """Square int64 counts, gt on rows, prediction on columns.

    With include_unknown, the sentinel 255 maps to an extra trailing
    class index S in both prediction and ground truth.
    """

    num_classes: int
    include_unknown: bool = False
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        c = self.num_classes + (1 if self.include_unknown else 0)
        self.counts = np.zeros((c, c), dtype=np.int64)

    @property
    def size(self) -> int:
        return self.counts.shape[0]


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray,
               ignore_label: int | None = None) -> ConfusionMatrix:
    """Add one image's pixels into the matrix; gt==ignore_label is skipped."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ")
    p = pred.astype(np.int64).ravel()
    g = gt.astype(np.int64).ravel()
    if ignore_label is not None:
        keep = g != ignore_label
        p, g = p[keep], g[keep]
    if cm.include_unknown:
        p = np.where(p == UNKNOWN_LABEL, cm.num_classes, p)
        g = np.where(g == UNKNOWN_LABEL, cm.num_classes, g)
    c = cm.size
    if p.size:
        if p.min() < 0 or p.max() >= c:
            raise ValueError(
                f"prediction labels outside [0, {c}) "
                f"(range {p.min()}..{p.max()})")
        if g.min() < 0 or g.max() >= c:
            raise ValueError(
                f"ground-truth labels outside [0, {c}) "
                f"(range {g.min()}..{g.max()})")
        flat = np.bincount(g * c + p, minlength=c * c)
        cm.counts += flat.reshape(c, c)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Mean IoU over classes with non-empty union; per-class NaN otherwise."""
    diag = np.diag(cm.counts).astype(np.float64)
    union = (cm.counts.sum(axis=1) + cm.counts.sum(axis=0)
             ).astype(np.float64) - diag
    valid = union > 0
    if not valid.any():
        raise UndefinedMetricError("no class has any pixels; mIoU undefined")
    per_class = np.full(cm.size, np.nan)
    per_class[valid] = diag[valid] / union[valid]
    return float(per_class[valid].mean()), per_class
