"""Price/return handling, rolling historical-VaR targets and labelling.

Conventions used throughout the package:

* Series are ``pandas.Series`` indexed by a UTC ``DatetimeIndex``.
* A return stamped ``t`` is the log-return over the period ending at ``t``.
* A ``TvarSeries`` row stamped ``t`` is the historical VaR computed from the
  ``window`` returns ending at ``t`` (inclusive). It is the risk target for
  the *next* period, so it is known at decision time ``t``.
  :func:`applicable_target` shifts it onto the period it applies to.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

CLASS_NEUTRAL = 0
CLASS_GAIN = 1
CLASS_TAIL = 2


class DataError(ValueError):
    """Raised for malformed or inconsistent input series."""


@dataclass(frozen=True)
class RiskTargetSpec:
    alpha: float
    window: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if int(self.window) != self.window or self.window < 2:
            raise ValueError(f"window must be an integer >= 2, got {self.window}")

    @property
    def tag(self) -> str:
        return f"a{self.alpha:g}_w{self.window}"


@dataclass
class CostMatrix:
    class_means: tuple[float, float, float]
    class_weights: tuple[float, float, float]
    cF: float
    cT: float
    empty_classes: tuple[int, ...] = field(default_factory=tuple)


def validate_prices(prices: pd.Series) -> pd.Series:
    if len(prices) < 2:
        raise DataError("price series needs at least 2 observations")
    idx = prices.index
    if not idx.is_monotonic_increasing or idx.has_duplicates:
        raise DataError("timestamps must be strictly increasing")
    values = prices.to_numpy(dtype=float)
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        raise DataError(f"non-positive or missing price at index {bad[0]} ({idx[bad[0]]})")
    return prices.astype(float)


def log_returns(prices: pd.Series) -> pd.Series:
    """One-period log-returns ``ln(P_t / P_{t-1})``, stamped at ``t``."""
    prices = validate_prices(prices)
    values = prices.to_numpy()
    out = np.log(values[1:] / values[:-1])
    return pd.Series(out, index=prices.index[1:], name="r")


def _order_index(level: float, window: int) -> int:
    # round() guards against (1 - 0.01) * 100 == 99.00000000000001
    k = math.ceil(round(level * window, 9))
    return min(max(k, 1), window)


def rolling_hist_var(returns: pd.Series, spec: RiskTargetSpec, chunk: int = 4096) -> pd.DataFrame:
    """Rolling historical VaR of the loss series ``-r``.

    ``upper`` is the order statistic ``ceil((1 - alpha) * w)`` of the sorted
    window losses (loss tail), ``lower`` the order statistic
    ``ceil(alpha * w)`` (gain tail). No interpolation. Rows whose window is
    incomplete are NaN.
    """
    w = spec.window
    n = len(returns)
    if w >= n:
        raise DataError(f"window {w} must be shorter than the series ({n})")
    losses = -returns.to_numpy(dtype=float)
    if not np.all(np.isfinite(losses)):
        raise DataError("returns must be finite")
    k_hi = _order_index(1.0 - spec.alpha, w) - 1
    k_lo = _order_index(spec.alpha, w) - 1
    upper = np.full(n, np.nan)
    lower = np.full(n, np.nan)
    windows = sliding_window_view(losses, w)
    kth = sorted({k_lo, k_hi})
    for start in range(0, len(windows), chunk):
        block = np.partition(windows[start:start + chunk], kth, axis=1)
        upper[w - 1 + start:w - 1 + start + len(block)] = block[:, k_hi]
        lower[w - 1 + start:w - 1 + start + len(block)] = block[:, k_lo]
    return pd.DataFrame({"upper": upper, "lower": lower}, index=returns.index)


def applicable_target(tvar: pd.DataFrame) -> pd.DataFrame:
    """Shift decision-time thresholds onto the period they apply to."""
    return tvar.shift(1)


def _aligned(returns: pd.Series, tvar: pd.DataFrame) -> tuple[np.ndarray, pd.DataFrame]:
    if not returns.index.equals(tvar.index):
        raise DataError("returns and tvar must share the same index")
    target = applicable_target(tvar)
    mask = target["upper"].notna().to_numpy()
    return mask, target


def exceedance_rate(returns: pd.Series, tvar: pd.DataFrame) -> float:
    """Fraction of periods whose loss reaches the applicable target (``>=``)."""
    mask, target = _aligned(returns, tvar)
    if not mask.any():
        raise DataError("no overlap between returns and defined targets")
    loss = -returns.to_numpy()[mask]
    return float(np.mean(loss >= target["upper"].to_numpy()[mask]))


def make_labels(returns: pd.Series, tvar: pd.DataFrame) -> pd.Series:
    """3-class labels: 2 for a loss strictly above the upper target,
    1 for a loss strictly below the lower target, 0 otherwise."""
    mask, target = _aligned(returns, tvar)
    loss = -returns.to_numpy()[mask]
    up = target["upper"].to_numpy()[mask]
    lo = target["lower"].to_numpy()[mask]
    labels = np.zeros(loss.shape, dtype=np.int64)
    labels[loss < lo] = CLASS_GAIN
    labels[loss > up] = CLASS_TAIL
    return pd.Series(labels, index=returns.index[mask], name="label")


def oracle_signals(returns: pd.Series, tvar: pd.DataFrame) -> pd.Series:
    """Perfect-foresight hedge signal ``s_t = 1[-r_{t+1} >= upper_t]``.

    Stamped at decision time ``t``; the final timestamp has no next period
    and is dropped, as are timestamps without a defined target.
    """
    if not returns.index.equals(tvar.index):
        raise DataError("returns and tvar must share the same index")
    next_loss = -returns.shift(-1)
    upper = tvar["upper"]
    valid = next_loss.notna() & upper.notna()
    sig = (next_loss[valid] >= upper[valid]).astype(np.int64)
    sig.name = "s"
    return sig


def min_tpr(exceedance: float, alpha: float) -> float:
    """Smallest true-positive rate keeping the hedged strategy within target."""
    if exceedance <= 0 or exceedance < alpha:
        return 0.0
    return float(min(max((exceedance - alpha) / exceedance, 0.0), 1.0))


def class_costs(returns: pd.Series, labels: pd.Series) -> CostMatrix:
    r = returns.reindex(labels.index).to_numpy(dtype=float)
    y = labels.to_numpy()
    if np.isnan(r).any():
        raise DataError("labels contain timestamps missing from returns")
    n = len(y)
    means, weights, empty = [], [], []
    for c in (CLASS_NEUTRAL, CLASS_GAIN, CLASS_TAIL):
        sel = y == c
        cnt = int(sel.sum())
        weights.append(cnt / n if n else 0.0)
        if cnt == 0:
            empty.append(c)
            means.append(0.0)
        else:
            means.append(float(r[sel].mean()))
    if empty:
        warnings.warn(f"empty classes {empty}: mean return set to 0", RuntimeWarning, stacklevel=2)
    cT = -means[2] * weights[2]
    cF = means[0] * weights[0] + means[1] * weights[1]
    return CostMatrix(tuple(means), tuple(weights), cF, cT, tuple(empty))


def time_series_folds(n: int, fold_len: int, min_train: int) -> list[tuple[range, range]]:
    """Expanding-window splits ``train=[0, k)``, ``test=[k, k + fold_len)``."""
    if fold_len < 1 or min_train < 1 or n < min_train + fold_len:
        raise ValueError(f"infeasible folds: n={n}, fold_len={fold_len}, min_train={min_train}")
    folds = []
    k = min_train
    while k + fold_len <= n:
        folds.append((range(0, k), range(k, k + fold_len)))
        k += fold_len
    return folds
