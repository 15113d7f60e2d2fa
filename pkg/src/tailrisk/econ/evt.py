"""Generalised Pareto tail of standardised residuals (peaks over threshold)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .garch import VolForecast

XI_ZERO = 1e-8


@dataclass(frozen=True)
class GpdParams:
    xi: float
    beta: float
    threshold_g: float
    tail_fraction: float = 0.05

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"GPD scale must be > 0, got {self.beta}")

    to_dict = asdict

    @classmethod
    def from_dict(cls, d):
        return cls(d["xi"], d["beta"], d["threshold_g"], d.get("tail_fraction", 0.05))


def gpd_cdf(params: GpdParams, x):
    """``G_{xi,beta}(x)`` for exceedance amounts ``x >= 0``.

    Points beyond the upper end point (``xi < 0``) map to 1.
    """
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    xi, beta = params.xi, params.beta
    if abs(xi) < XI_ZERO:
        out = -np.expm1(-x / beta)
    else:
        base = 1.0 + xi * x / beta
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(base > 0, -np.expm1(-np.log(np.where(base > 0, base, 1.0)) / xi), 1.0)
    return out if out.ndim else float(out)


def gpd_nll(xi: float, beta: float, y: np.ndarray) -> float:
    if beta <= 0:
        return np.inf
    if abs(xi) < XI_ZERO:
        return len(y) * np.log(beta) + y.sum() / beta
    base = 1.0 + xi * y / beta
    if np.any(base <= 0):
        return np.inf
    return len(y) * np.log(beta) + (1.0 + 1.0 / xi) * np.log(base).sum()


def fit_exceedances(y) -> tuple[float, float]:
    """Maximum-likelihood ``(xi, beta)`` for positive exceedances ``y``."""
    y = np.asarray(y, dtype=float)
    m, v = y.mean(), y.var()
    xi0 = float(np.clip(0.5 * (1.0 - m * m / v), -0.4, 0.8))
    beta0 = float(max(0.5 * m * (m * m / v + 1.0), 1e-8))

    def obj(z):
        return gpd_nll(z[0], np.exp(z[1]), y)

    res = minimize(obj, [xi0, np.log(beta0)], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    return float(res.x[0]), float(np.exp(res.x[1]))


def gpd_fit(residuals, tail_fraction: float = 0.05, min_exceedances: int = 50) -> GpdParams:
    """Fit the GPD to residuals above their ``1 - tail_fraction`` quantile."""
    r = np.asarray(residuals, dtype=float)
    r = r[np.isfinite(r)]
    if len(r) == 0:
        raise ValueError("no residuals supplied")
    g = float(np.quantile(r, 1.0 - tail_fraction))
    y = r[r > g] - g
    if len(y) < min_exceedances:
        raise ValueError(f"only {len(y)} exceedances over g={g:.4g}; need {min_exceedances}")
    xi, beta = fit_exceedances(y)
    return GpdParams(xi, beta, g, tail_fraction)


def exceedance_prob_normal(f: VolForecast, tvar: float) -> float:
    """``P(loss >= tvar)`` under a Gaussian loss forecast."""
    z = (tvar - f.mu_hat) / f.sigma_hat
    return float(norm.sf(z))


def exceedance_prob_evt(f: VolForecast, gpd: GpdParams, tvar: float) -> float:
    """Peaks-over-threshold tail above ``g``, Gaussian below it."""
    z = (tvar - f.mu_hat) / f.sigma_hat
    if z >= gpd.threshold_g:
        return float(gpd.tail_fraction * (1.0 - gpd_cdf(gpd, z - gpd.threshold_g)))
    return float(norm.sf(z))


def quantile_normal(f: VolForecast, alpha: float) -> float:
    """Loss level exceeded with probability ``alpha``."""
    return float(f.mu_hat + f.sigma_hat * norm.isf(alpha))


def quantile_evt(f: VolForecast, gpd: GpdParams, alpha: float) -> float:
    """Loss level whose tail probability is ``alpha``: the peaks-over-threshold
    inversion for ``alpha <= tail_fraction``, the Gaussian quantile above."""
    if alpha > gpd.tail_fraction:
        return quantile_normal(f, alpha)
    ratio = alpha / gpd.tail_fraction
    if abs(gpd.xi) < XI_ZERO:
        excess = -gpd.beta * np.log(ratio)
    else:
        excess = gpd.beta / gpd.xi * (ratio ** (-gpd.xi) - 1.0)
    return float(f.mu_hat + f.sigma_hat * (gpd.threshold_g + excess))
