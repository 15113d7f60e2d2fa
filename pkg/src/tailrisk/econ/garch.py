"""ARMA(P,Q)-GARCH(p,q) filtering and Gaussian quasi-maximum likelihood.

The recursions are linear filters once the innovations are known, so the
filter and all parameter derivatives run through ``scipy.signal.lfilter``
rather than Python loops.

Orders are given as ``(P, Q, p, q)``: ``P`` AR lags, ``Q`` MA lags, ``p``
lagged variances (``garch``) and ``q`` lagged squared innovations
(``arch``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter, lfiltic
from scipy.special import expit

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)


class FitError(RuntimeError):
    """Optimizer failure; ``best`` holds the best parameters found, if any."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass
class ArmaGarchParams:
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    omega: float = 1.0
    arch: np.ndarray = field(default_factory=lambda: np.zeros(0))
    garch: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loglik: float | None = None

    def __post_init__(self):
        self.ar = np.atleast_1d(np.asarray(self.ar, dtype=float))
        self.ma = np.atleast_1d(np.asarray(self.ma, dtype=float))
        self.arch = np.atleast_1d(np.asarray(self.arch, dtype=float))
        self.garch = np.atleast_1d(np.asarray(self.garch, dtype=float))
        self.omega = float(self.omega)

    @property
    def orders(self) -> tuple[int, int, int, int]:
        return len(self.ar), len(self.ma), len(self.garch), len(self.arch)

    @property
    def persistence(self) -> float:
        return float(self.arch.sum() + self.garch.sum())

    def check(self) -> None:
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if np.any(self.arch < 0) or np.any(self.garch < 0):
            raise ValueError("arch/garch coefficients must be >= 0")
        if not self.persistence < 1:
            raise ValueError(f"non-stationary: sum(arch)+sum(garch) = {self.persistence}")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.ar, self.ma, [self.omega], self.arch, self.garch])

    @classmethod
    def from_vector(cls, theta, orders) -> "ArmaGarchParams":
        P, Q, p, q = orders
        theta = np.asarray(theta, dtype=float)
        i = 0
        ar = theta[i:i + P]; i += P
        ma = theta[i:i + Q]; i += Q
        omega = theta[i]; i += 1
        arch = theta[i:i + q]; i += q
        garch = theta[i:i + p]
        return cls(ar, ma, omega, arch, garch)

    def to_dict(self) -> dict:
        return {
            "ar": self.ar.tolist(), "ma": self.ma.tolist(), "omega": self.omega,
            "arch": self.arch.tolist(), "garch": self.garch.tolist(), "loglik": self.loglik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmaGarchParams":
        return cls(d["ar"], d["ma"], d["omega"], d["arch"], d["garch"], d.get("loglik"))


@dataclass(frozen=True)
class VolForecast:
    mu_hat: float
    sigma_hat: float

    def __post_init__(self):
        if not (np.isfinite(self.mu_hat) and np.isfinite(self.sigma_hat) and self.sigma_hat > 0):
            raise ValueError(f"invalid forecast mu={self.mu_hat}, sigma={self.sigma_hat}")


def _lagged(x: np.ndarray, lag: int, fill: float = 0.0) -> np.ndarray:
    out = np.empty_like(x)
    out[:lag] = fill
    out[lag:] = x[:len(x) - lag]
    return out


def _filter(params: ArmaGarchParams, x: np.ndarray, v0: float, want_grad: bool = False):
    """Run the recursions; optionally return derivatives wrt the natural vector.

    Returns ``(eps, sig2)`` or ``(eps, sig2, deps, dsig2)`` with derivative
    arrays of shape ``(n_params, n)``.
    """
    P, Q, p, q = params.orders
    a, b, al, be = params.ar, params.ma, params.arch, params.garch
    ma_den = np.concatenate([[1.0], b])
    u = lfilter(np.concatenate([[1.0], -a]), [1.0], x)
    eps = lfilter([1.0], ma_den, u)
    e2 = eps * eps
    z = np.full_like(x, params.omega)
    for j in range(q):
        z += al[j] * _lagged(e2, j + 1, v0)
    var_den = np.concatenate([[1.0], -be])
    if p:
        zi = lfiltic([1.0], var_den, y=np.full(p, v0))
        sig2 = lfilter([1.0], var_den, z, zi=zi)[0]
    else:
        sig2 = z
    if not want_grad:
        return eps, sig2

    n = len(x)
    k = P + Q + 1 + q + p
    deps = np.zeros((k, n))
    for i in range(P):
        deps[i] = -_lagged(x, i + 1)
    for j in range(Q):
        deps[P + j] = -_lagged(eps, j + 1)
    if P + Q:
        deps[:P + Q] = lfilter([1.0], ma_den, deps[:P + Q], axis=1)
    dz = np.zeros((k, n))
    if P + Q:
        for j in range(q):
            dz[:P + Q] += al[j] * 2.0 * _lagged(eps, j + 1) * _lagged_rows(deps[:P + Q], j + 1)
    o = P + Q
    dz[o] = 1.0
    for j in range(q):
        dz[o + 1 + j] = _lagged(e2, j + 1, v0)
    for i in range(p):
        dz[o + 1 + q + i] = _lagged(sig2, i + 1, v0)
    dsig2 = lfilter([1.0], var_den, dz, axis=1) if p else dz
    return eps, sig2, deps, dsig2


def _lagged_rows(m: np.ndarray, lag: int) -> np.ndarray:
    out = np.zeros_like(m)
    out[:, lag:] = m[:, :m.shape[1] - lag]
    return out


def garch_filter(params: ArmaGarchParams, x, presample: float | None = None):
    """Conditional means, volatilities and innovations of ``x``.

    ``presample`` seeds lagged variances and squared innovations; it defaults
    to the sample variance of ``x``. Pre-sample levels and innovations are 0.
    """
    params.check()
    x = np.asarray(x, dtype=float)
    v0 = float(np.var(x)) if presample is None else float(presample)
    eps, sig2 = _filter(params, x, v0)
    return x - eps, np.sqrt(sig2), eps


def loglik(params: ArmaGarchParams, x, presample: float | None = None, grad: bool = False):
    """Gaussian quasi log-likelihood (and its gradient wrt the natural vector)."""
    x = np.asarray(x, dtype=float)
    v0 = float(np.var(x)) if presample is None else float(presample)
    if not grad:
        eps, sig2 = _filter(params, x, v0)
        return float(-0.5 * np.sum(LOG2PI + np.log(sig2) + eps * eps / sig2))
    eps, sig2, deps, dsig2 = _filter(params, x, v0, want_grad=True)
    ll = float(-0.5 * np.sum(LOG2PI + np.log(sig2) + eps * eps / sig2))
    g = -0.5 * ((1.0 / sig2 - eps * eps / sig2 ** 2) * dsig2 + 2.0 * eps / sig2 * deps).sum(axis=1)
    return ll, g


def scores(params: ArmaGarchParams, x, presample: float | None = None) -> np.ndarray:
    """Per-observation score contributions, shape ``(n, n_params)``."""
    x = np.asarray(x, dtype=float)
    v0 = float(np.var(x)) if presample is None else float(presample)
    eps, sig2, deps, dsig2 = _filter(params, x, v0, want_grad=True)
    s = -0.5 * ((1.0 / sig2 - eps * eps / sig2 ** 2) * dsig2 + 2.0 * eps / sig2 * deps)
    return s.T


def forecast(params: ArmaGarchParams, history, presample: float | None = None) -> VolForecast:
    """One-step-ahead conditional mean and volatility after ``history``."""
    history = np.asarray(history, dtype=float)
    P, Q, p, q = params.orders
    if len(history) <= max(P, Q, p, q):
        raise ValueError("history shorter than the maximum lag")
    v0 = float(np.var(history)) if presample is None else float(presample)
    mu, sigma, _ = garch_filter(params, np.append(history, 0.0), v0)
    return VolForecast(float(mu[-1]), float(sigma[-1]))


# -- reparameterisation -------------------------------------------------------

def _softplus(c):
    return np.logaddexp(0.0, c)


class _Transform:
    """Unconstrained vector <-> natural parameters.

    ``omega = exp(u)``; ``(arch, garch) = sigmoid(v) * softplus(c) / sum(softplus(c))``
    so the persistence is always the budget ``sigmoid(v) < 1``.
    """

    def __init__(self, orders):
        self.orders = orders
        P, Q, p, q = orders
        self.nm = P + Q
        self.nv = p + q
        self.n_shares = self.nv if self.nv >= 2 else 0
        self.size = self.nm + 1 + self.n_shares + (1 if self.nv else 0)

    def natural(self, phi):
        nm, nv = self.nm, self.nv
        theta = np.empty(nm + 1 + nv)
        theta[:nm] = phi[:nm]
        theta[nm] = np.exp(phi[nm])
        if nv:
            s = expit(phi[-1])
            if self.n_shares:
                g = _softplus(phi[nm + 1:nm + 1 + nv])
                theta[nm + 1:] = s * g / g.sum()
            else:
                theta[nm + 1:] = s
        return theta

    def jacobian(self, phi):
        """d natural / d phi, shape ``(n_natural, size)``."""
        nm, nv = self.nm, self.nv
        J = np.zeros((nm + 1 + nv, self.size))
        J[:nm, :nm] = np.eye(nm)
        J[nm, nm] = np.exp(phi[nm])
        if nv:
            s = expit(phi[-1])
            if self.n_shares:
                c = phi[nm + 1:nm + 1 + nv]
                g = _softplus(c)
                G = g.sum()
                pi = g / G
                dg = expit(c)
                J[nm + 1:, nm + 1:nm + 1 + nv] = s * (np.eye(nv) - pi[:, None]) * (dg / G)[None, :]
                J[nm + 1:, -1] = s * (1 - s) * pi
            else:
                J[nm + 1:, -1] = s * (1 - s)
        return J

    def unconstrained(self, theta):
        nm, nv = self.nm, self.nv
        phi = np.zeros(self.size)
        phi[:nm] = theta[:nm]
        phi[nm] = np.log(theta[nm])
        if nv:
            v = theta[nm + 1:]
            s = min(max(v.sum(), 1e-6), 1 - 1e-6)
            phi[-1] = np.log(s / (1 - s))
            if self.n_shares:
                shares = np.maximum(v / max(v.sum(), 1e-12), 1e-6) * nv
                phi[nm + 1:nm + 1 + nv] = np.log(np.expm1(shares))
        return phi


def default_init(orders, x) -> ArmaGarchParams:
    P, Q, p, q = orders
    var = float(np.var(x))
    arch = np.full(q, 0.05 / max(q, 1))
    garch = np.full(p, 0.90 / max(p, 1))
    persistence = arch.sum() + garch.sum()
    return ArmaGarchParams(np.zeros(P), np.zeros(Q), var * (1 - persistence), arch, garch)


def qmle_fit(x, orders=(0, 0, 1, 1), init: ArmaGarchParams | None = None,
             maxiter: int = 500, gtol: float = 1e-6, presample: float | None = None,
             trace: list | None = None, numerical_gradient: bool = False) -> ArmaGarchParams:
    """Gaussian QMLE of an ARMA-GARCH model.

    The series is rescaled to unit variance internally; the returned
    parameters are on the original scale and carry ``loglik``. When
    ``trace`` is a list, the objective after each iteration is appended to it.
    """
    x = np.asarray(x, dtype=float)
    P, Q, p, q = orders
    n_par = P + Q + 1 + p + q
    if len(x) < 10 * n_par:
        raise ValueError(f"need at least {10 * n_par} observations, got {len(x)}")
    sd = float(np.std(x))
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, float(np.max(np.abs(x)))):
        raise ValueError("cannot fit a constant series")
    xs = x / sd
    v0 = 1.0 if presample is None else float(presample) / sd ** 2
    tr = _Transform(orders)
    if init is None:
        start = default_init(orders, xs)
    else:
        start = ArmaGarchParams(init.ar, init.ma, init.omega / sd ** 2, init.arch, init.garch)
        if start.persistence >= 1:
            start = default_init(orders, xs)
    phi0 = tr.unconstrained(start.to_vector())
    n = len(xs)
    best = {"f": np.inf, "phi": phi0}

    def objective(phi):
        theta = tr.natural(phi)
        params = ArmaGarchParams.from_vector(theta, orders)
        with np.errstate(all="ignore"):
            ll, g = loglik(params, xs, v0, grad=True)
        f = -ll / n
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return 1e10, np.zeros_like(phi)
        if f < best["f"]:
            best.update(f=f, phi=phi.copy())
        return f, -(g @ tr.jacobian(phi)) / n

    def callback(phi):
        if trace is not None:
            trace.append(objective(phi)[0])

    if trace is not None:
        trace.append(objective(phi0)[0])
    if numerical_gradient:
        res = minimize(lambda z: objective(z)[0], phi0, method="L-BFGS-B",
                       options={"maxiter": maxiter, "gtol": gtol}, callback=callback)
    else:
        res = minimize(objective, phi0, jac=True, method="L-BFGS-B",
                       options={"maxiter": maxiter, "gtol": gtol}, callback=callback)
    phi = res.x if res.fun <= best["f"] else best["phi"]
    fitted = _rescale(ArmaGarchParams.from_vector(tr.natural(phi), orders), sd)
    fitted.loglik = loglik(fitted, x, presample if presample is not None else float(np.var(x)))
    if res.status == 1:
        raise FitError(f"QMLE did not converge in {maxiter} iterations", best=fitted)
    if not res.success:
        log.debug("QMLE stopped early: %s", res.message)
    return fitted


def _rescale(params: ArmaGarchParams, sd: float) -> ArmaGarchParams:
    return ArmaGarchParams(params.ar, params.ma, params.omega * sd ** 2, params.arch, params.garch)


def simulate(params: ArmaGarchParams, n: int, rng: np.random.Generator, burn: int = 500,
             innovations=None) -> np.ndarray:
    """Simulate the model with N(0,1) (or user supplied standardised) shocks."""
    params.check()
    P, Q, p, q = params.orders
    total = n + burn
    z = rng.standard_normal(total) if innovations is None else np.asarray(innovations)
    if len(z) != total:
        raise ValueError("innovations must have length n + burn")
    uncond = params.omega / (1 - params.persistence)
    m = max(P, Q, p, q, 1)
    x = np.zeros(total + m)
    eps = np.zeros(total + m)
    sig2 = np.full(total + m, uncond)
    e2 = np.full(total + m, uncond)
    for t in range(m, total + m):
        s2 = params.omega
        for j in range(q):
            s2 += params.arch[j] * e2[t - 1 - j]
        for i in range(p):
            s2 += params.garch[i] * sig2[t - 1 - i]
        sig2[t] = s2
        eps[t] = np.sqrt(s2) * z[t - m]
        e2[t] = eps[t] ** 2
        mean = 0.0
        for i in range(P):
            mean += params.ar[i] * x[t - 1 - i]
        for j in range(Q):
            mean += params.ma[j] * eps[t - 1 - j]
        x[t] = mean + eps[t]
    return x[m + burn:]
