"""Classification metrics: accuracy, precision, recall, F1, and AUC.

AUC uses the rank statistic with average ranks for ties, equivalent to
counting concordant positive/negative pairs with ties worth half.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float | None
    flags: list[str] = field(default_factory=list)
    averaging: str = "binary"

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "threshold": self.threshold,
            "flags": self.flags,
            "averaging": self.averaging,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1 or s.shape[0] != y.shape[0]:
        raise DataError(f"scores/labels length mismatch: {s.shape} vs {y.shape}")
    if s.shape[0] < 1:
        raise DataError("metrics require at least one example")
    if not np.all(np.isfinite(s)):
        raise NumericError("scores contain non-finite values")
    return s, y


def tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative."""
    s, y = _validate(scores, labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: needs at least one positive and one negative")
    r = tied_ranks(s)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    s, y = _validate(scores, labels)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("binary metrics require labels in {0, 1}")
    pred = (s >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))

    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("no_positive_predictions")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("no_positive_labels")
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    accuracy = (tp + tn) / len(y)

    try:
        auc_value: float | None = auc(s, y)
    except DataError:
        auc_value = None
        flags.append("auc_undefined_single_class")

    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc_value,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=threshold,
        flags=flags,
    )


def multiclass_metrics(probabilities, labels) -> MetricsReport:
    """Weighted-average precision/recall/F1 over argmax predictions.

    AUC is omitted for multi-class reports; per-class scores are
    weighted by class support.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise DataError(f"probabilities/labels mismatch: {p.shape} vs {y.shape}")
    if p.shape[0] < 1:
        raise DataError("metrics require at least one example")
    pred = p.argmax(axis=1)
    classes = np.arange(p.shape[1])
    flags = []

    precisions, recalls, f1s, supports = [], [], [], []
    for c in classes:
        tp_c = int(np.sum((pred == c) & (y == c)))
        fp_c = int(np.sum((pred == c) & (y != c)))
        fn_c = int(np.sum((pred != c) & (y == c)))
        prec = tp_c / (tp_c + fp_c) if tp_c + fp_c else 0.0
        rec = tp_c / (tp_c + fn_c) if tp_c + fn_c else 0.0
        f1c = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1c)
        supports.append(int(np.sum(y == c)))
    weights = np.asarray(supports, dtype=np.float64)
    if weights.sum() == 0:
        raise DataError("no labeled examples in any configured class")
    weights = weights / weights.sum()

    return MetricsReport(
        accuracy=float(np.mean(pred == y)),
        precision=float(np.dot(weights, precisions)),
        recall=float(np.dot(weights, recalls)),
        f1=float(np.dot(weights, f1s)),
        auc=None,
        tp=int(np.sum(pred == y)),
        fp=int(np.sum(pred != y)),
        tn=0,
        fn=0,
        threshold=None,
        flags=flags + ["multiclass_counts_are_correct_incorrect"],
        averaging="weighted",
    )
