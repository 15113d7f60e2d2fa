"""Rolling one-step exceedance probabilities from the econometric models.

At each decision index ``t`` a model sees the losses ``-r`` up to ``t`` and
reports ``p_t = P(-r_{t+1} >= upper_t)``, where ``upper_t`` is the risk
target stamped at ``t``. Parameters are re-estimated every ``refit_every``
decisions on a trailing window, warm-started from the previous fit; in
between, the last parameters are reused with the updated history.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .carlvol import carlvol_fit, carlvol_prob, carlvol_sigma_forecast
from .evt import (exceedance_prob_evt, exceedance_prob_normal, gpd_fit, quantile_evt,
                  quantile_normal)
from .garch import FitError, forecast, garch_filter, qmle_fit
from .lpa import lpa_select_interval

log = logging.getLogger(__name__)

ECON_MODELS = ("garch_norm", "garch_evt", "carlvol", "lpa_garch")


@dataclass
class RollingConfig:
    fit_window: int = 2880
    refit_every: int = 1
    orders: tuple[int, int, int, int] = (3, 1, 2, 1)
    maxiter: int = 500
    tail_fraction: float = 0.05
    min_exceedances: int = 50
    lpa_step: int = 5
    lpa_min_window: int = 240
    lpa_every: int = 5
    lpa_bootstrap_B: int = 100
    lpa_min_segment: int = 30
    seed: int = 0

    to_dict = asdict


def _qmle(x, orders, init, maxiter):
    try:
        return qmle_fit(x, orders, init=init, maxiter=maxiter), False
    except FitError as err:
        if err.best is None:
            raise
        return err.best, True


class _Tracker:
    def __init__(self):
        self.refits = 0
        self.nonconverged = 0
        self.fallbacks = 0


def rolling_probabilities(returns: pd.Series, tvar: pd.DataFrame, model: str, alpha: float,
                          positions=None, config: RollingConfig | None = None) -> pd.DataFrame:
    """Per-decision output for ``model``.

    ``positions`` are integer decision indices into ``returns`` (default:
    every index with a defined target and a full fitting window). The frame
    has column ``p`` and, for the GARCH-based models, ``mu``, ``sigma`` and
    ``var`` (the model's ``alpha``-level one-step loss quantile).
    """
    if model not in ECON_MODELS:
        raise ValueError(f"unknown econometric model {model!r}")
    config = config or RollingConfig()
    loss = -returns.to_numpy(dtype=float)
    upper = tvar["upper"].to_numpy(dtype=float)
    W = config.fit_window
    if positions is None:
        positions = [t for t in range(W - 1, len(loss)) if np.isfinite(upper[t])]
    positions = list(positions)
    if not positions:
        raise ValueError("no decision positions to evaluate")
    if positions[0] < W - 1:
        raise ValueError(f"decision index {positions[0]} has less than {W} observations of history")
    if model == "lpa_garch" and W < config.lpa_min_window:
        raise ValueError("fit_window must be at least the minimal LPA window")

    runner = {"garch_norm": _run_garch, "garch_evt": _run_garch,
              "carlvol": _run_carlvol, "lpa_garch": _run_lpa}[model]
    track = _Tracker()
    rows = runner(model, loss, upper, alpha, positions, config, track)
    out = pd.DataFrame(rows, index=returns.index[positions])
    out.attrs.update(model=model, refits=track.refits, nonconverged=track.nonconverged,
                     fallbacks=track.fallbacks)
    if track.nonconverged or track.fallbacks:
        log.warning("%s: %d non-converged fits, %d fallbacks over %d refits", model,
                    track.nonconverged, track.fallbacks, track.refits)
    return out


def _due(k: int, every: int) -> bool:
    return k % max(every, 1) == 0


def _run_garch(model, loss, upper, alpha, positions, config, track):
    params, gpd, rows = None, None, []
    for k, t in enumerate(positions):
        hist = loss[t - config.fit_window + 1:t + 1]
        presample = float(np.var(hist))
        if params is None or _due(k, config.refit_every):
            params, bad = _qmle(hist, config.orders, params, config.maxiter)
            track.refits += 1
            track.nonconverged += bad
            if model == "garch_evt":
                _, sigma, eps = garch_filter(params, hist, presample)
                try:
                    gpd = gpd_fit(eps / sigma, config.tail_fraction, config.min_exceedances)
                except ValueError:
                    if gpd is None:
                        raise
                    track.fallbacks += 1
        f = forecast(params, hist, presample)
        if model == "garch_norm":
            rows.append({"p": exceedance_prob_normal(f, upper[t]), "mu": f.mu_hat,
                         "sigma": f.sigma_hat, "var": quantile_normal(f, alpha)})
        else:
            rows.append({"p": exceedance_prob_evt(f, gpd, upper[t]), "mu": f.mu_hat,
                         "sigma": f.sigma_hat, "var": quantile_evt(f, gpd, alpha)})
    return rows


def _run_carlvol(model, loss, upper, alpha, positions, config, track):
    params, rows = None, []
    for k, t in enumerate(positions):
        hist = loss[t - config.fit_window + 1:t + 1]
        presample = float(np.var(hist))
        Q = upper[t]
        if params is None or _due(k, config.refit_every):
            try:
                params = carlvol_fit(hist, Q, init=params, maxiter=config.maxiter, presample=presample)
            except FitError as err:
                params = err.best
                track.nonconverged += 1
            except ValueError:
                # all-hit window: no information beyond the empirical rate
                track.fallbacks += 1
            track.refits += 1
        if params is None:
            rows.append({"p": float(np.mean(hist >= Q))})
            continue
        sigma = carlvol_sigma_forecast(params, hist, presample)
        rows.append({"p": 1.0 - carlvol_prob(params, sigma, Q)})
    return rows


def _run_lpa(model, loss, upper, alpha, positions, config, track):
    rows, chosen = [], None
    for k, t in enumerate(positions):
        if chosen is None or _due(k, config.lpa_every):
            lo = t - config.fit_window + 1
            window = loss[lo:t + 1]
            chosen = lpa_select_interval(
                window, len(window) - 1, step=config.lpa_step, bootstrap_B=config.lpa_bootstrap_B,
                seed=config.seed, min_window=config.lpa_min_window, max_window=config.fit_window,
                min_segment=config.lpa_min_segment, maxiter=config.maxiter)
            start = lo + chosen.start
            track.refits += 1
        hist = loss[start:t + 1]
        f = forecast(chosen.params, hist, float(np.var(hist)))
        rows.append({"p": exceedance_prob_normal(f, upper[t]), "mu": f.mu_hat,
                     "sigma": f.sigma_hat, "var": quantile_normal(f, alpha),
                     "interval": len(hist)})
    return rows
