"""Correlation and classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from leakbench.errors import UndefinedCorrelationError

STD_CONVENTION = "population"


@dataclass(frozen=True)
class MetricSummary:
    plcc: float | None
    srocc: float | None
    n: int

    @property
    def undefined(self) -> bool:
        return self.plcc is None or self.srocc is None

    def to_json(self) -> dict:
        return {"plcc": self.plcc, "srocc": self.srocc, "n": self.n}


def _as_pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    return x, y


def plcc(x, y) -> float:
    """Pearson product-moment correlation."""
    x, y = _as_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def rank(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def srocc(x, y) -> float:
    """Spearman rank-order correlation: Pearson on average ranks."""
    x, y = _as_pair(x, y)
    return plcc(rank(x), rank(y))


def summarize(pred, target) -> MetricSummary:
    pred, target = _as_pair(pred, target)
    try:
        return MetricSummary(plcc(pred, target), srocc(pred, target), int(pred.size))
    except UndefinedCorrelationError:
        return MetricSummary(None, None, int(pred.size))


def accuracy(pred_classes, true_classes) -> float:
    pred = np.asarray(pred_classes).ravel()
    true = np.asarray(true_classes).ravel()
    if pred.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {true.size}")
    return float(np.mean(pred == true))


def class_distribution(classes, labels: Sequence | None = None) -> dict:
    """Fraction of each class. ``labels`` fixes the key set and order."""
    classes = list(np.asarray(classes).ravel().tolist())
    if not classes:
        raise ValueError("class distribution of an empty set")
    keys = list(labels) if labels is not None else sorted(set(classes))
    n = len(classes)
    return {k: classes.count(k) / n for k in keys}


def aggregate(summaries: Iterable[MetricSummary]) -> dict:
    """Mean and population standard deviation of PLCC and SROCC.

    Replicates with an undefined correlation are left out and counted.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValueError("nothing to aggregate")
    defined = [s for s in summaries if not s.undefined]
    out: dict = {
        "n_replicates": len(summaries),
        "n_undefined": len(summaries) - len(defined),
        "std_convention": STD_CONVENTION,
    }
    for name in ("plcc", "srocc"):
        values = np.array([getattr(s, name) for s in defined], dtype=np.float64)
        if values.size:
            out[f"{name}_mean"] = float(values.mean())
            out[f"{name}_std"] = float(values.std(ddof=0))
        else:
            out[f"{name}_mean"] = None
            out[f"{name}_std"] = None
    return out
