"""Precision/recall/F1 from confusion counts, ROC-AUC and AUPR from scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(
            tp=int(np.sum(y_true & y_pred)), fp=int(np.sum(~y_true & y_pred)),
            fn=int(np.sum(y_true & ~y_pred)), tn=int(np.sum(~y_true & ~y_pred)),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def prf1(counts: ConfusionCounts) -> PRF1:
    """Precision, recall and F1; any 0/0 yields 0 and sets ``degenerate``."""
    degenerate = False
    if counts.tp + counts.fp:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision, degenerate = 0.0, True
    if counts.tp + counts.fn:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return PRF1(precision, recall, f1, degenerate)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied pairs count one half."""
    scores, labels = _check_binary(scores, labels)
    ranks = rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve, sweeping thresholds downward.

    Tied scores enter the sweep together, so the value does not depend on
    input order.
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_tie = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last_of_tie]
    fp = (last_of_tie + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    recall_step = np.diff(np.r_[0.0, recall])
    return float(np.sum(recall_step * precision))


def auc_aupr(scores, labels) -> tuple[float, float]:
    return roc_auc(scores, labels), average_precision(scores, labels)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if labels.all() or not labels.any():
        raise DataError("AUC/AUPR need at least one positive and one negative label")
    return scores, labels


def evaluate(scores, labels, threshold: float) -> dict:
    """Full report for scores thresholded strictly above ``threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    counts = ConfusionCounts.from_predictions(labels, scores > threshold)
    m = prf1(counts)
    report = dict(
        counts=counts.to_dict(), precision=m.precision, recall=m.recall, f1=m.f1,
        degenerate=m.degenerate, threshold=float(threshold),
    )
    if labels.any() and not labels.all():
        report["auc"], report["aupr"] = auc_aupr(scores, labels)
    else:
        report["auc"] = report["aupr"] = None
    return report
