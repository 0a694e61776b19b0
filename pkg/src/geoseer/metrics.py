"""Imbalance-aware evaluation: confusion counts, AUROC, F1, balanced accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricSet:
    auroc: float
    f1: float
    balanced_accuracy: float

    def __post_init__(self) -> None:
        for name in ("auroc", "f1", "balanced_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")


def confusion(labels: Sequence[int], scores: Sequence[float], threshold: float = 0.5) -> ConfusionMatrix:
    """Tally counts with scores >= threshold predicted positive (inclusive)."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.size == 0:
        raise ValueError("labels and scores must be equal-length and non-empty")
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        threshold=float(threshold),
    )


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    # 1-based ranks; tied scores share the mean of the positions they span.
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    i = 0
    n = scores.shape[0]
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg) with half credit for ties.

    Computed via average ranks in O(n log n); defined by the pairwise formula.
    """
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(y == 1))
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    ranks = _average_ranks(s)
    u = float(np.sum(ranks[y == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def f1(cm: ConfusionMatrix) -> float:
    """Harmonic mean of precision and recall; 0 on any zero denominator."""
    if cm.tp + cm.fp == 0 or cm.tp + cm.fn == 0:
        return 0.0
    precision = cm.tp / (cm.tp + cm.fp)
    recall = cm.tp / (cm.tp + cm.fn)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean of the true-positive and true-negative rates."""
    if cm.tp + cm.fn == 0 or cm.tn + cm.fp == 0:
        raise ValueError("balanced accuracy needs both classes present")
    tpr = cm.tp / (cm.tp + cm.fn)
    tnr = cm.tn / (cm.tn + cm.fp)
    return 0.5 * (tpr + tnr)
