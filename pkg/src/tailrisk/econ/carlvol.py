"""CARL-vol: a logistic link from GARCH(1,1) volatility to the hit probability.

For a fixed threshold ``Q`` the model gives ``p_t = P(y_t <= Q)`` as
``0.5 / (1 + exp(-x_t)) + 0.5 * 1[Q > 0]`` with ``x_t = phi0 + phi1 * sigma_t``
and ``sigma_t^2 = omega + beta1 * sigma_{t-1}^2 + alpha1 * (y_{t-1} - mu)^2``.

We apply it to the loss series with ``Q`` equal to the (positive) risk
target, so ``p_t`` is the probability of *staying within* the target and the
exceedance probability is ``1 - p_t``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter, lfiltic
from scipy.special import expit

from .garch import FitError

EPS = 1e-9


@dataclass
class CarlVolParams:
    phi0: float = 0.0
    phi1: float = 0.0
    omega: float = 1.0
    alpha1: float = 0.05
    beta1: float = 0.9
    mu: float = 0.0
    nll: float | None = None

    def check(self) -> None:
        if not self.omega > 0:
            raise ValueError("omega must be > 0")
        if self.alpha1 < 0 or self.beta1 < 0 or self.alpha1 + self.beta1 >= 1:
            raise ValueError("need alpha1, beta1 >= 0 and alpha1 + beta1 < 1")

    def to_vector(self) -> np.ndarray:
        return np.array([self.phi0, self.phi1, self.omega, self.alpha1, self.beta1, self.mu])

    @classmethod
    def from_vector(cls, v) -> "CarlVolParams":
        return cls(*map(float, v))

    to_dict = asdict

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def carlvol_prob(params: CarlVolParams, sigma_t, Q: float):
    x = params.phi0 + params.phi1 * np.asarray(sigma_t, dtype=float)
    out = 0.5 * expit(x) + (0.5 if Q > 0 else 0.0)
    return out if np.ndim(out) else float(out)


def _variance(params: CarlVolParams, y: np.ndarray, v0: float, want_grad: bool = False):
    n = len(y)
    dev = np.empty(n)
    dev[0] = 0.0
    dev[1:] = y[:-1] - params.mu
    drive = params.omega + params.alpha1 * dev ** 2
    drive[0] = v0
    den = [1.0, -params.beta1]
    # sigma2[0] = v0 is the seed; the recursion starts at t = 1
    sig2 = _recursion(drive, params.beta1, v0)
    if not want_grad:
        return sig2
    d = np.zeros((4, n))
    d[0, 1:] = 1.0
    d[1, 1:] = dev[1:] ** 2
    d[2, 1:] = sig2[:-1]
    d[3, 1:] = -2.0 * params.alpha1 * dev[1:]
    dsig2 = lfilter([1.0], den, d, axis=1)
    return sig2, dsig2


def _recursion(drive: np.ndarray, beta1: float, v0: float) -> np.ndarray:
    if len(drive) == 1:
        return np.array([v0])
    rest = lfilter([1.0], [1.0, -beta1], drive[1:], zi=lfiltic([1.0], [1.0, -beta1], y=[v0]))[0]
    return np.concatenate([[v0], rest])


def carlvol_nll(params: CarlVolParams, y, Q: float, presample: float | None = None,
                grad: bool = False):
    """Bernoulli negative log-likelihood of the hits ``1[y_t <= Q]``."""
    y = np.asarray(y, dtype=float)
    v0 = float(np.var(y)) if presample is None else float(presample)
    hit = (y <= Q).astype(float)
    if not grad:
        sig2 = _variance(params, y, v0)
        p = np.clip(carlvol_prob(params, np.sqrt(sig2), Q), EPS, 1 - EPS)
        return float(-np.sum(hit * np.log(p) + (1 - hit) * np.log1p(-p)))
    sig2, dsig2 = _variance(params, y, v0, want_grad=True)
    sigma = np.sqrt(sig2)
    x = params.phi0 + params.phi1 * sigma
    lam = expit(x)
    raw = 0.5 * lam + (0.5 if Q > 0 else 0.0)
    p = np.clip(raw, EPS, 1 - EPS)
    nll = float(-np.sum(hit * np.log(p) + (1 - hit) * np.log1p(-p)))
    dnll_dp = -(hit / p - (1 - hit) / (1 - p))
    dnll_dp = np.where((raw > EPS) & (raw < 1 - EPS), dnll_dp, 0.0)
    dnll_dx = dnll_dp * 0.5 * lam * (1 - lam)
    g = np.empty(6)
    g[0] = dnll_dx.sum()
    g[1] = (dnll_dx * sigma).sum()
    dx_dsig2 = params.phi1 / (2.0 * sigma)
    g[2:] = (dsig2 * (dnll_dx * dx_dsig2)).sum(axis=1)
    return nll, g


def carlvol_sigma_forecast(params: CarlVolParams, y, presample: float | None = None) -> float:
    """Volatility for the period after the last observation of ``y``."""
    y = np.asarray(y, dtype=float)
    v0 = float(np.var(y)) if presample is None else float(presample)
    sig2 = _variance(params, np.append(y, 0.0), v0)
    return float(np.sqrt(sig2[-1]))


def _natural(z):
    s = expit(z[5])
    share = expit(z[4])
    return np.array([z[0], z[1], np.exp(z[2]), s * share, s * (1 - share), z[3]])


def _jac(z):
    s = expit(z[5])
    share = expit(z[4])
    J = np.zeros((6, 6))
    J[0, 0] = J[1, 1] = 1.0
    J[2, 2] = np.exp(z[2])
    J[3, 4] = s * share * (1 - share)
    J[3, 5] = s * (1 - s) * share
    J[4, 4] = -s * share * (1 - share)
    J[4, 5] = s * (1 - s) * (1 - share)
    J[5, 3] = 1.0
    return J


def carlvol_fit(y, Q: float, init: CarlVolParams | None = None, maxiter: int = 500,
                gtol: float = 1e-6, presample: float | None = None) -> CarlVolParams:
    """Maximum-likelihood fit; the variance parameters use the same
    exp / budget reparameterisation as the QMLE fit."""
    y = np.asarray(y, dtype=float)
    hits = y <= Q
    if hits.all() or not hits.any():
        raise ValueError("degenerate likelihood: all hits or no hits")
    if len(y) < 60:
        raise ValueError(f"need at least 60 observations, got {len(y)}")
    sd = float(np.std(y))
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise ValueError("cannot fit a constant series")
    ys, Qs = y / sd, Q / sd
    v0 = 1.0 if presample is None else float(presample) / sd ** 2
    if init is None:
        rate = float(hits.mean())
        lam = np.clip(2.0 * rate - 1.0 if Q > 0 else 2.0 * rate, 1e-3, 1 - 1e-3)
        start = CarlVolParams(float(np.log(lam / (1 - lam))), 0.0, 0.1, 0.05, 0.85, float(ys.mean()))
    else:
        start = CarlVolParams(init.phi0, init.phi1 * sd, init.omega / sd ** 2,
                              init.alpha1, init.beta1, init.mu / sd)
    s = min(max(start.alpha1 + start.beta1, 1e-4), 1 - 1e-4)
    share = min(max(start.alpha1 / s, 1e-4), 1 - 1e-4)
    z0 = np.array([start.phi0, start.phi1, np.log(start.omega), start.mu,
                   np.log(share / (1 - share)), np.log(s / (1 - s))])
    n = len(ys)

    def objective(z):
        theta = _natural(z)
        params = CarlVolParams.from_vector(theta)
        with np.errstate(all="ignore"):
            f, g = carlvol_nll(params, ys, Qs, v0, grad=True)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return 1e10, np.zeros(6)
        return f / n, (g @ _jac(z)) / n

    # box on the unconstrained scale keeps omega away from underflow and mu
    # within the bulk of the standardised data
    bounds = [(None, None), (None, None), (-25.0, 25.0), (-10.0, 10.0), (None, None), (None, None)]
    z0[2:4] = np.clip(z0[2:4], [-25.0, -10.0], [25.0, 10.0])
    res = minimize(objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter, "gtol": gtol})
    th = _natural(res.x)
    fitted = CarlVolParams(th[0], th[1] / sd, th[2] * sd ** 2, th[3], th[4], th[5] * sd)
    fitted.nll = carlvol_nll(fitted, y, Q, presample if presample is not None else float(np.var(y)))
    if res.status == 1:
        raise FitError(f"CARL-vol fit did not converge in {maxiter} iterations", best=fitted)
    return fitted


def simulate(params: CarlVolParams, n: int, Q: float, rng: np.random.Generator,
             burn: int = 200) -> np.ndarray:
    """Draw ``y`` with GARCH(1,1) dynamics whose hit events follow the CARL-vol
    probability: at each step ``y_t`` lands at or below ``Q`` with probability
    ``p_t``, otherwise above it, with magnitude scaled by ``sigma_t``."""
    params.check()
    total = n + burn
    y = np.zeros(total)
    sig2 = params.omega / (1 - params.alpha1 - params.beta1)
    prev = params.mu
    for t in range(total):
        if t:
            sig2 = params.omega + params.beta1 * sig2 + params.alpha1 * (prev - params.mu) ** 2
        sigma = np.sqrt(sig2)
        p = carlvol_prob(params, sigma, Q)
        mag = abs(rng.standard_normal()) * sigma
        y[t] = Q - mag if rng.random() < p else Q + mag + 1e-12
        prev = y[t]
    return y[burn:]
