"""Binary-classification metrics: confusion counts, accuracy, precision, recall, F1.

The positive class is cancer (label 1) throughout.  Degenerate denominators
return 0 rather than NaN, matching the convention of common reporting tools;
this matters on heavily imbalanced evaluation sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mean_loss: float
    confusion: ConfusionMatrix
    n: int

    def to_record(self) -> dict:
        """Flat record with fixed key names, ready for serialization."""
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mean_loss": self.mean_loss,
            "n": self.n,
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "fn": self.confusion.fn,
            "tn": self.confusion.tn,
        }


def confusion(labels: Sequence[int], predictions: Sequence[int]) -> ConfusionMatrix:
    """Count the confusion matrix of binary labels vs. predictions.

    Raises ValueError on empty input or length mismatch.
    """
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} labels vs {p.shape[0]} predictions")
    if y.size == 0:
        raise ValueError("cannot count a confusion matrix over zero samples")
    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    tn = int(np.sum((y == 0) & (p == 0)))
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def compute_metrics(m: ConfusionMatrix, mean_loss: float = 0.0) -> EvaluationReport:
    """Derive accuracy/precision/recall/F1 from confusion counts."""
    total = m.total
    if total <= 0:
        raise ValueError("confusion matrix has no samples")
    accuracy = (m.tp + m.tn) / total
    precision = m.tp / (m.tp + m.fp) if (m.tp + m.fp) > 0 else 0.0
    recall = m.tp / (m.tp + m.fn) if (m.tp + m.fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return EvaluationReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        mean_loss=mean_loss,
        confusion=m,
        n=total,
    )


def report_from_predictions(
    labels: Sequence[int], predictions: Sequence[int], mean_loss: float = 0.0
) -> EvaluationReport:
    return compute_metrics(confusion(labels, predictions), mean_loss=mean_loss)
