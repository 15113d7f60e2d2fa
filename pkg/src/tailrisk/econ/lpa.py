"""Local parametric approach: longest trailing window of GARCH(1,1) homogeneity.

Candidate windows end at the current time ``t`` and grow by ``step``
observations. For each candidate the GARCH(1,1) QMLE is computed and the
homogeneity statistic is the supremum, over breakpoints on a grid every
``step`` points, of the likelihood ratio between a two-segment fit and the
pooled fit. Segment gains use the local quadratic expansion around the pooled
estimate with the pooled outer-product information, so after whitening the
scores ``u_i`` the gain of a split at ``tau`` is

    (|S_left|^2 / f + |S_right|^2 / (1 - f) - |S|^2) / (2 n),  f = tau / n.

Critical values come from a multiplier bootstrap: whitened scores are
re-weighted by Rademacher multipliers and the same statistic is recomputed.
One critical value, the ``level``-quantile of the bootstrap maximum over all
candidates, controls the false alarm rate of the whole scan.

On the first rejected candidate the break is located at the maximising
breakpoint and the longest candidate starting at or after it is returned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .garch import ArmaGarchParams, qmle_fit, scores

MIN_WINDOW = 240
MAX_WINDOW = 2880


@dataclass
class HomogeneityInterval:
    start: int
    end: int
    params: ArmaGarchParams
    rejected_at: int | None = None
    critical_value: float | None = None

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def candidate_ladder(t: int, step: int = 5, min_window: int = MIN_WINDOW,
                     max_window: int = MAX_WINDOW) -> list[int]:
    """Candidate lengths, shortest first, for windows ending at index ``t``."""
    longest = min(max_window, t + 1)
    if longest < min_window:
        raise ValueError(f"need at least {min_window} observations up to t, have {t + 1}")
    return list(range(min_window, longest + 1, step))


def _whiten(s: np.ndarray) -> np.ndarray:
    """Map scores to coordinates where the pooled information is the identity."""
    info = s.T @ s / len(s)
    info += 1e-10 * np.trace(info) * np.eye(len(info))
    chol = np.linalg.cholesky(info)
    return np.linalg.solve(chol, s.T).T


def _split_gain(cum: np.ndarray, total: np.ndarray, frac: np.ndarray, n: int) -> np.ndarray:
    """Quadratic LR of split vs pooled from whitened score sums ``cum`` (..., G, d)."""
    right = total[..., None, :] - cum
    q_left = (cum * cum).sum(-1) / frac
    q_right = (right * right).sum(-1) / (1.0 - frac)
    q_full = (total * total).sum(-1)
    return 0.5 * (q_left + q_right - q_full[..., None]) / n


def _statistics(s: np.ndarray, mult: np.ndarray | None, step: int, min_segment: int):
    """Observed sup-LR, its argmax offset and bootstrap sup-LRs for one window."""
    n = len(s)
    grid = np.arange(min_segment, n - min_segment + 1, step)
    if grid.size == 0:
        return 0.0, None, None
    u = _whiten(s)
    frac = grid / n
    cum = np.cumsum(u, axis=0)
    obs = _split_gain(cum[grid - 1], cum[-1], frac, n)
    j = int(np.argmax(obs))
    boot = None
    if mult is not None:
        cum_b = np.cumsum((mult - 1.0)[:, :, None] * u[None], axis=1)
        boot = _split_gain(cum_b[:, grid - 1], cum_b[:, -1], frac, n).max(axis=1)
    return float(obs[j]), int(grid[j]), boot


def lpa_select_interval(x, t: int, step: int = 5, candidates: list[int] | None = None,
                        bootstrap_B: int = 100, seed: int = 0, level: float = 0.95,
                        min_window: int = MIN_WINDOW, max_window: int = MAX_WINDOW,
                        min_segment: int = 30, maxiter: int = 200,
                        bootstrap_every: int = 1) -> HomogeneityInterval:
    """Select the largest interval of homogeneity ending at index ``t``.

    ``candidates`` are window lengths (shortest first); by default the ladder
    ``min_window, min_window + step, ...`` capped at ``max_window``.
    """
    x = np.asarray(x, dtype=float)
    if candidates is None:
        candidates = candidate_ladder(t, step, min_window, max_window)
    candidates = sorted(candidates)
    if candidates[0] > t + 1:
        raise ValueError(f"series too short: need {candidates[0]} observations, have {t + 1}")
    candidates = [c for c in candidates if c <= t + 1]

    fits = []
    init = None
    for length in candidates:
        seg = x[t - length + 1:t + 1]
        init = qmle_fit(seg, (0, 0, 1, 1), init=init, maxiter=maxiter)
        fits.append(init)
    if len(candidates) == 1:
        return HomogeneityInterval(t - candidates[0] + 1, t, fits[0])

    rng = np.random.default_rng([seed, t - candidates[-1] + 1])
    mult = 1.0 + rng.choice([-1.0, 1.0], size=(bootstrap_B, candidates[-1]))
    observed, argmax, boot_max = [], [], np.full(bootstrap_B, -np.inf)
    last = len(candidates) - 1
    for k, (length, params) in enumerate(zip(candidates, fits)):
        seg = x[t - length + 1:t + 1]
        s = scores(params, seg, float(np.var(seg)))
        use_boot = k % bootstrap_every == 0 or k == last
        obs, tau, boot = _statistics(s, mult[:, -length:] if use_boot else None, step,
                                     min(min_segment, length // 3))
        observed.append(obs)
        argmax.append(tau)
        if boot is not None:
            boot_max = np.maximum(boot_max, boot)
    crit = float(np.quantile(boot_max, level))

    for k, obs in enumerate(observed):
        if k == 0 or obs <= crit:
            continue
        # break located inside the rejected window; keep the longest candidate after it
        start_rejected = t - candidates[k] + 1
        brk = start_rejected + argmax[k]
        best = 0
        for i in range(k):
            if t - candidates[i] + 1 >= brk:
                best = i
        return HomogeneityInterval(t - candidates[best] + 1, t, fits[best], rejected_at=k,
                                   critical_value=crit)
    return HomogeneityInterval(t - candidates[-1] + 1, t, fits[-1], critical_value=crit)
