"""ROC, AUC and the cost-weighted risk-adjusted AUC."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .timeseries import CostMatrix


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


@dataclass
class AaucReport:
    auc: float
    aauc: float
    cF: float
    cT: float
    folds: list[tuple[float, float]] = field(default_factory=list)


def _binary(positives) -> np.ndarray:
    y = np.asarray(positives)
    if not np.all(np.isin(y, (0, 1, True, False))):
        raise ValueError("positives must be binary")
    return y.astype(bool)


def roc_curve(scores, positives) -> RocCurve:
    """Sweep decision ``score >= u`` over all distinct scores, highest first.

    Tied scores enter together, so each distinct score adds one point.
    """
    s = np.asarray(scores, dtype=float)
    y = _binary(positives)
    if s.shape != y.shape:
        raise ValueError("scores and positives differ in shape")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s_sorted)), len(s) - 1]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = (last_of_group + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s_sorted[last_of_group]]
    return RocCurve(fpr, tpr, thresholds)


def auc(curve: RocCurve) -> float:
    return float(np.trapezoid(curve.tpr, curve.fpr))


def _aroc_area(curve: RocCurve, cF: float, cT: float) -> float:
    m = max(cF, cT)
    # scale factors first, so equal costs leave the curve bit-identical
    x = curve.fpr * (cF / m)
    y = curve.tpr * (cT / m)
    if x[-1] < 1.0:
        x = np.r_[x, 1.0]
        y = np.r_[y, y[-1]]
    return float(np.trapezoid(y, x))


def risk_adjusted_auc(scores, positives, costs: CostMatrix | tuple[float, float]) -> AaucReport:
    """AUC plus the area under ``(cF * FPR / m, cT * TPR / m)``, ``m = max(cF, cT)``.

    Costs enter through their magnitudes; the curve is extended horizontally
    to ``x = 1`` when ``cF < cT``.
    """
    if isinstance(costs, CostMatrix):
        cF, cT = costs.cF, costs.cT
    else:
        cF, cT = costs
    cF, cT = abs(float(cF)), abs(float(cT))
    if cF == 0 and cT == 0:
        raise ValueError("both misclassification costs are zero")
    curve = roc_curve(scores, positives)
    return AaucReport(auc(curve), _aroc_area(curve, cF, cT), cF, cT)


def folded_metric(scores, positives, folds, metric):
    """Apply ``metric(scores, positives)`` per fold of test positions.

    Returns ``(mean, variance, per_fold_values, skipped_fold_indices)``;
    folds with a single class are skipped with a warning.
    """
    s = np.asarray(scores, dtype=float)
    y = _binary(positives)
    values, skipped = [], []
    for i, fold in enumerate(folds):
        idx = np.asarray(list(fold), dtype=int)
        yy = y[idx]
        if yy.all() or not yy.any():
            skipped.append(i)
            continue
        values.append(float(metric(s[idx], yy)))
    if not values:
        raise ValueError("every fold is single-class")
    if skipped:
        warnings.warn(f"skipped single-class folds {skipped}", RuntimeWarning, stacklevel=2)
    arr = np.array(values)
    return float(arr.mean()), float(arr.var()), values, skipped
