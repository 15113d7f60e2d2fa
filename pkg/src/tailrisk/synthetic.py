"""Regime-switching GARCH(1,1) price paths for tests and the bundled fixture."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class Regime:
    omega: float
    alpha: float
    beta: float
    drift: float = 0.0


CALM = Regime(omega=2e-7, alpha=0.06, beta=0.90, drift=5e-5)
STRESS = Regime(omega=2e-6, alpha=0.12, beta=0.85, drift=-1e-4)


def regime_switching_returns(n: int, rng: np.random.Generator, regimes=(CALM, STRESS),
                             stay: float = 0.995, df: float | None = 4.0,
                             burn: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Log-returns and regime labels from a Markov-switching GARCH(1,1).

    Innovations are unit-variance Student-t with ``df`` degrees of freedom,
    or Gaussian when ``df`` is None. The chain stays in its regime with
    probability ``stay`` each step.
    """
    total = n + burn
    if df is None:
        z = rng.standard_normal(total)
    else:
        if df <= 2:
            raise ValueError("df must exceed 2 for unit-variance innovations")
        z = rng.standard_t(df, total) * np.sqrt((df - 2.0) / df)
    switch = rng.random(total) > stay
    state = np.empty(total, dtype=int)
    state[0] = 0
    for t in range(1, total):
        state[t] = state[t - 1] ^ int(switch[t])
    omega = np.array([g.omega for g in regimes])
    alpha = np.array([g.alpha for g in regimes])
    beta = np.array([g.beta for g in regimes])
    drift = np.array([g.drift for g in regimes])
    r = np.empty(total)
    sig2 = omega[0] / (1.0 - alpha[0] - beta[0])
    eps_prev = 0.0
    for t in range(total):
        k = state[t]
        if t:
            sig2 = omega[k] + alpha[k] * eps_prev ** 2 + beta[k] * sig2
        eps_prev = np.sqrt(sig2) * z[t]
        r[t] = drift[k] + eps_prev
    return r[burn:], state[burn:]


def synthetic_prices(n: int = 2000, seed: int = 0, start: str = "2020-01-01", p0: float = 10_000.0,
                     **kwargs) -> pd.Series:
    """Hourly close prices of length ``n`` (``n - 1`` returns)."""
    if n < 2:
        raise ValueError("need at least two prices")
    r, _ = regime_switching_returns(n - 1, np.random.default_rng(seed), **kwargs)
    closes = p0 * np.exp(np.r_[0.0, np.cumsum(r)])
    idx = pd.date_range(start, periods=n, freq="h", tz="UTC", name="timestamp")
    return pd.Series(closes, index=idx, name="close")
