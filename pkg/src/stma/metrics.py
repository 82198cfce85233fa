"""Classification metrics: accuracy, precision/recall/F1, and ROC AUC.

The hate class (label 1) is the positive class. AUC comes from a
trapezoidal sweep of the ROC curve with tied scores grouped into one
segment; ``mann_whitney_auc`` computes the same quantity through average
ranks and exists as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1, "auc": self.auc,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
        }

    def format_line(self) -> str:
        auc = "undefined" if self.auc is None else f"{self.auc:.4f}"
        return (f"acc={self.accuracy:.4f} p={self.precision:.4f} "
                f"r={self.recall:.4f} f1={self.f1:.4f} auc={auc}")


def confusion_counts(labels, preds) -> tuple[int, int, int, int]:
    labels = np.asarray(labels, dtype=int)
    preds = np.asarray(preds, dtype=int)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    return tp, fp, fn, tn


def roc_auc_trapezoid(labels, scores) -> float | None:
    """Area under the ROC curve by the trapezoidal rule; tied scores form
    a single diagonal segment (average-rank behavior). None if only one
    class is present."""
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    area = 0.0
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        dtp = dfp = 0
        while j < n and scores[order[j]] == scores[order[i]]:
            if labels[order[j]] == 1:
                dtp += 1
            else:
                dfp += 1
            j += 1
        # one segment per distinct score: trapezoid over the fp step
        area += dfp * (tp + tp + dtp) / 2.0
        tp += dtp
        fp += dfp
        i = j
    return area / (pos * neg)


def mann_whitney_auc(labels, scores) -> float | None:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average of ranks i+1..j
        i = j
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - pos * (pos + 1) / 2.0
    return u / (pos * neg)


def evaluate_predictions(labels, hate_scores) -> MetricsReport:
    """Metrics from true labels and P(hate) scores; predicted label is
    the argmax, i.e. hate iff score > 0.5."""
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(hate_scores, dtype=np.float64)
    preds = (scores > 0.5).astype(int)
    tp, fp, fn, tn = confusion_counts(labels, preds)
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return MetricsReport(accuracy=accuracy, precision=precision,
                         recall=recall, f1=f1,
                         auc=roc_auc_trapezoid(labels, scores),
                         tp=tp, fp=fp, fn=fn, tn=tn)
