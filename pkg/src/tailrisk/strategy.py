"""Threshold selection, fee-aware backtesting and benchmark strategies.

Positions are stamped at decision time ``t`` and held over the next period:
1 means fully invested, 0 means out of the market. Strategy returns are log
returns ``R = pos_t * r_{t+1} - fee * |pos_t - pos_{t-1}|`` starting from a
flat book, and equity is ``exp(cumsum(R))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .timeseries import DataError, applicable_target, min_tpr

PERIODS_PER_YEAR = 8760
FEE_RATE = 0.001


@dataclass(frozen=True)
class ThresholdChoice:
    u_star: float
    feasible_set_nonempty: bool
    train_tpr: float
    min_tpr: float
    exceedance: float
    objective: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BacktestReport:
    positions: pd.Series
    strategy_returns: pd.Series
    equity: pd.Series
    trades: int
    fees: float
    stats: dict = field(default_factory=dict)

    def ledger(self) -> pd.DataFrame:
        return pd.DataFrame({"position": self.positions.reindex(self.strategy_returns.index),
                             "strategy_return": self.strategy_returns,
                             "equity": self.equity})

    def summary(self) -> dict:
        return {"trades": self.trades, "fees": self.fees, **self.stats}


def _next_period(probs_index: pd.Index, returns: pd.Series, tvar: pd.DataFrame):
    """Next-period return and the decision-time target for each decision."""
    nxt = returns.shift(-1).reindex(probs_index)
    upper = tvar["upper"].reindex(probs_index)
    return nxt, upper


def threshold_select(probs: pd.Series, returns: pd.Series, tvar: pd.DataFrame, alpha: float,
                     candidates=None) -> ThresholdChoice:
    """Tail-loss-optimal cutoff ``u``; hedge at ``t`` when ``p_t >= u``.

    Among cutoffs whose true-positive rate on the tail events reaches the
    minimum rate implied by the sample exceedance and ``alpha``, pick the one
    maximising the excess return ``sum(-hedge_t * r_{t+1})``; ties go to the
    largest cutoff. When no cutoff is feasible the one with the highest
    true-positive rate is returned and ``feasible_set_nonempty`` is False.
    """
    nxt, upper = _next_period(probs.index, returns, tvar)
    ok = (nxt.notna() & upper.notna() & probs.notna()).to_numpy()
    p = probs.to_numpy(dtype=float)[ok]
    r1 = nxt.to_numpy(dtype=float)[ok]
    event = -r1 >= upper.to_numpy(dtype=float)[ok]
    if not event.any():
        raise DataError("no tail events in the training range")
    exc = float(event.mean())
    bound = min_tpr(exc, alpha)
    if candidates is None:
        distinct = np.unique(p)
        candidates = np.unique(np.r_[0.0, (distinct[:-1] + distinct[1:]) / 2.0, 1.0])
    u = np.sort(np.asarray(candidates, dtype=float))[::-1]

    order = np.argsort(p, kind="mergesort")
    p_sorted = p[order]
    # totals over {p >= u} via suffix sums of the ascending sort
    suffix_events = np.r_[np.cumsum(event[order][::-1])[::-1], 0]
    suffix_gain = np.r_[np.cumsum(-r1[order][::-1])[::-1], 0.0]
    first = np.searchsorted(p_sorted, u, side="left")
    tpr = suffix_events[first] / event.sum()
    gain = suffix_gain[first]

    feasible = tpr >= bound - 1e-12
    if feasible.any():
        pick = int(np.argmax(np.where(feasible, gain, -np.inf)))
    else:
        pick = int(np.argmax(tpr))
    return ThresholdChoice(float(u[pick]), bool(feasible.any()), float(tpr[pick]), bound, exc,
                           float(gain[pick]))


def signals_from_threshold(probs: pd.Series, u: float) -> pd.Series:
    """Positions: out of the market (0) when ``p >= u``, invested (1) otherwise."""
    return (1.0 - (probs >= u).astype(float)).rename("position")


def summary_stats(R, periods_per_year: int = PERIODS_PER_YEAR) -> dict:
    """Annualised statistics of per-period log returns ``R``."""
    R = np.asarray(R, dtype=float)
    if len(R) < 2:
        raise ValueError("need at least two returns")
    P = periods_per_year
    mean = float(R.mean())
    ann_mean = mean * P
    vol = float(R.std(ddof=1) * math.sqrt(P))
    downside = float(math.sqrt(np.mean(np.minimum(R, 0.0) ** 2)) * math.sqrt(P))
    equity = np.exp(np.r_[0.0, np.cumsum(R)])
    peak = np.maximum.accumulate(equity)
    mdd = float(np.max(1.0 - equity / peak))

    def ratio(num, den):
        # a denominator that is rounding noise relative to the numerator counts as zero
        if den > 1e-9 * abs(num):
            return num / den, False
        return (math.copysign(math.inf, num) if num else 0.0), bool(num)

    sharpe, sharpe_inf = ratio(ann_mean, vol)
    sortino, sortino_inf = ratio(ann_mean, downside)
    return {
        "average_return": mean,
        "annualized_return": ann_mean,
        "total_return": float(equity[-1] - 1.0),
        "volatility": vol,
        "sharpe": sharpe,
        "sharpe_infinite": sharpe_inf,
        "sortino": sortino,
        "sortino_infinite": sortino_inf,
        "mdd": mdd,
        "n_periods": int(len(R)),
    }


def backtest(positions: pd.Series, returns: pd.Series, fee_rate: float = FEE_RATE,
             periods_per_year: int = PERIODS_PER_YEAR) -> BacktestReport:
    """Run decision-stamped positions over the following periods' returns."""
    pos = positions.to_numpy(dtype=float)
    if np.any(~np.isfinite(pos)) or np.any((pos < 0) | (pos > 1)):
        raise ValueError("positions must be finite and in [0, 1]")
    loc = returns.index.get_indexer(positions.index)
    if np.any(loc < 0):
        raise DataError("position timestamps missing from the return series")
    if np.any(np.diff(loc) != 1):
        raise DataError("positions must cover consecutive periods")
    held = loc + 1 < len(returns)
    pos, loc = pos[held], loc[held]
    if len(pos) < 2:
        raise DataError("need at least two periods to backtest")
    r_next = returns.to_numpy(dtype=float)[loc + 1]
    turnover = np.abs(np.diff(np.r_[0.0, pos]))
    R = pos * r_next - fee_rate * turnover
    idx = returns.index[loc + 1]
    strat = pd.Series(R, index=idx, name="strategy_return")
    equity = pd.Series(np.exp(np.cumsum(R)), index=idx, name="equity")
    report = BacktestReport(pd.Series(pos, index=idx, name="position"), strat, equity,
                            int(np.count_nonzero(turnover)), float(fee_rate * turnover.sum()))
    report.stats = summary_stats(R, periods_per_year)
    return report


def strategy_exceedance(R: pd.Series, tvar: pd.DataFrame, alpha: float) -> tuple[float, bool]:
    """Fraction of periods with ``-R_t >= `` the target applicable to ``t``."""
    target = applicable_target(tvar)["upper"].reindex(R.index)
    ok = target.notna().to_numpy()
    if not ok.any():
        raise DataError("no overlap between strategy returns and defined targets")
    frac = float(np.mean(-R.to_numpy()[ok] >= target.to_numpy()[ok]))
    return frac, frac <= alpha


def benchmark_buy_hold(index: pd.Index) -> pd.Series:
    return pd.Series(1.0, index=index, name="position")


def benchmark_target_var(var_hat: pd.Series, tvar: pd.DataFrame) -> pd.Series:
    """Invested fraction ``min(1, TVaR_t / VaR_t)``, floored at 0.

    ``var_hat`` is a model's one-step loss quantile at the target level,
    stamped at decision time; a non-positive forecast means full investment.
    """
    upper = tvar["upper"].reindex(var_hat.index).to_numpy(dtype=float)
    v = var_hat.to_numpy(dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(v > 0, np.clip(upper / v, 0.0, 1.0), 1.0)
    return pd.Series(w, index=var_hat.index, name="position")


def rolling_zscore(x: np.ndarray, window: int) -> np.ndarray:
    """z-score of each point against the trailing ``window`` values including
    itself; NaN while the window is incomplete, 0 where the spread is flat."""
    z = np.full(len(x), np.nan)
    if len(x) < window:
        return z
    view = np.lib.stride_tricks.sliding_window_view(x, window)
    mu = view.mean(axis=1)
    sd = view.std(axis=1, ddof=1)
    cur = x[window - 1:]
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    z[window - 1:] = np.where(flat, 0.0, (cur - mu) / np.where(flat, 1.0, sd))
    return z


def benchmark_varspread(var_norm: pd.Series, var_evt: pd.Series, window: int = 240,
                        z_crit: float = 2.0) -> pd.Series:
    """Exit the market when the EVT-minus-normal VaR spread is unusually wide."""
    if not var_norm.index.equals(var_evt.index):
        raise DataError("VaR series must be aligned")
    spread = var_evt.to_numpy(dtype=float) - var_norm.to_numpy(dtype=float)
    z = rolling_zscore(spread, window)
    sell = np.nan_to_num(z, nan=0.0) > z_crit
    return pd.Series(np.where(sell, 0.0, 1.0), index=var_norm.index, name="position")


def trend_indicator(prices: pd.Series, index: pd.Index, n: int = 2880) -> pd.Series:
    """``1`` when the price at ``t`` is above the mean of the last ``n`` prices
    ending at ``t``; ``0`` otherwise or while history is short."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ma = prices.rolling(n, min_periods=n).mean()
    # relative slack so a flat path never reads as an uptrend through rounding
    delta = (prices > ma + 1e-12 * ma.abs()).astype(float).where(ma.notna(), 0.0)
    return delta.reindex(index).rename("delta")


def switch_strategy(prices: pd.Series, ens: pd.Series, varspread: pd.Series,
                    n: int = 2880) -> pd.Series:
    if not ens.index.equals(varspread.index):
        raise DataError("sub-strategy positions must be aligned")
    delta = trend_indicator(prices, ens.index, n)
    if delta.isna().any():
        raise DataError("prices do not cover every decision time")
    return (delta * ens + (1.0 - delta) * varspread).rename("position")
