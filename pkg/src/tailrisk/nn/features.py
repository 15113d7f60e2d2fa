"""Input features for the neural classifiers.

Per decision time ``t`` the MLP sees eight numbers: the simple returns over
``p + 1`` periods ending at ``t`` for ``p in (0, 1, 2, 4, 6, 13)``, then
``D_t = (r_t - lower_t) / lower_t`` and ``U_t = (r_t - upper_t) / upper_t``
where ``upper``/``lower`` are the decision-time risk targets.

The LSTM sees the trailing 24 rows of the lagged-return features; its
threshold features use the 24 trailing one-period returns, all normalised by
the thresholds known at ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..timeseries import DataError

LAGS = (0, 1, 2, 4, 6, 13)
SEQ_LEN = 24
FEATURE_NAMES = tuple(f"x{p}" for p in LAGS) + ("D", "U")


@dataclass
class FeatureMatrix:
    index: pd.DatetimeIndex
    values: np.ndarray
    variant: str

    def __len__(self):
        return len(self.index)

    def take(self, positions) -> "FeatureMatrix":
        return FeatureMatrix(self.index[positions], self.values[positions], self.variant)

    def loc(self, index) -> "FeatureMatrix":
        pos = self.index.get_indexer(index)
        if np.any(pos < 0):
            raise KeyError("timestamps missing from feature matrix")
        return self.take(pos)

    def to_frame(self) -> pd.DataFrame:
        if self.variant == "mlp":
            return pd.DataFrame(self.values, index=self.index, columns=FEATURE_NAMES)
        cols = [f"{name}_lag{SEQ_LEN - 1 - j}" for j in range(SEQ_LEN) for name in FEATURE_NAMES]
        return pd.DataFrame(self.values.reshape(len(self), -1), index=self.index, columns=cols)


def lag_returns(r: np.ndarray) -> np.ndarray:
    """Simple returns ``P_t / P_{t-1-p} - 1`` from log-returns, shape (n, 6)."""
    csum = np.concatenate([[0.0], np.cumsum(r)])
    n = len(r)
    out = np.full((n, len(LAGS)), np.nan)
    for j, p in enumerate(LAGS):
        out[p:, j] = np.expm1(csum[p + 1:] - csum[:n - p])
    return out


def _ratio(num: np.ndarray, den: np.ndarray, index, name: str) -> np.ndarray:
    zero = den == 0
    if np.any(zero):
        bad = index[np.flatnonzero(zero)[0]]
        raise DataError(f"zero {name} threshold at {bad}; cannot normalise")
    return (num - den) / den


def build_features(returns: pd.Series, tvar: pd.DataFrame, variant: str = "mlp") -> FeatureMatrix:
    if variant not in ("mlp", "lstm"):
        raise ValueError(f"unknown feature variant {variant!r}")
    if not returns.index.equals(tvar.index):
        raise DataError("returns and tvar must share the same index")
    r = returns.to_numpy(dtype=float)
    upper = tvar["upper"].to_numpy(dtype=float)
    lower = tvar["lower"].to_numpy(dtype=float)
    lags = lag_returns(r)
    first = max(LAGS) if variant == "mlp" else max(LAGS) + SEQ_LEN - 1
    ok = np.zeros(len(r), dtype=bool)
    ok[first:] = True
    ok &= np.isfinite(upper) & np.isfinite(lower)
    rows = np.flatnonzero(ok)
    index = returns.index[rows]
    if rows.size == 0:
        raise DataError("not enough history to build features")
    up, lo = upper[rows], lower[rows]
    if variant == "mlp":
        D = _ratio(r[rows], lo, index, "lower")
        U = _ratio(r[rows], up, index, "upper")
        return FeatureMatrix(index, np.column_stack([lags[rows], D, U]), "mlp")
    offsets = np.arange(-(SEQ_LEN - 1), 1)
    hist = rows[:, None] + offsets[None, :]
    _ratio(lo, lo, index, "lower")
    _ratio(up, up, index, "upper")
    seq_r = r[hist]
    D = (seq_r - lo[:, None]) / lo[:, None]
    U = (seq_r - up[:, None]) / up[:, None]
    values = np.concatenate([lags[hist], D[..., None], U[..., None]], axis=2)
    return FeatureMatrix(index, values, "lstm")
