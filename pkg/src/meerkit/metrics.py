"""Confusion matrices and unweighted average recall."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    class_labels: list[str]
    counts: np.ndarray = field(default=None)  # rows: true class, cols: predicted

    def __post_init__(self):
        c = len(self.class_labels)
        counts = (
            np.zeros((c, c), dtype=np.int64)
            if self.counts is None
            else np.asarray(self.counts, dtype=np.int64)
        )
        if counts.shape != (c, c) or (counts < 0).any():
            raise ValueError(f"counts must be a non-negative {c}x{c} matrix")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_labels != self.class_labels:
            raise ValueError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.class_labels, self.counts + other.counts)


def confusion_from_predictions(
    true_idx: np.ndarray, pred_idx: np.ndarray, class_labels: list[str]
) -> ConfusionMatrix:
    c = len(class_labels)
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (np.asarray(true_idx), np.asarray(pred_idx)), 1)
    return ConfusionMatrix(list(class_labels), counts)


def uar(confusion: ConfusionMatrix) -> float:
    """Mean per-class recall over classes that actually occur.

    Classes with zero true samples are left out of the mean rather than
    contributing 0/0.
    """
    row_sums = confusion.counts.sum(axis=1)
    present = row_sums > 0
    if not present.any():
        raise ValueError("confusion matrix has no observations")
    recalls = confusion.counts.diagonal()[present] / row_sums[present]
    return float(recalls.mean())
