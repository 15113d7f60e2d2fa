"""Ridge stacking of level-0 exceedance probabilities.

Each level-0 column is turned into a log-odds score and min-max rescaled to
``[0, 1]``; a ridge least-squares fit on the binary tail indicator gives the
stacking weights, and the meta probability is the linear score clipped to
``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import logit

EPS = 1e-6
WARMUP = 200


@dataclass(frozen=True)
class RidgeCoefficients:
    beta: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("non-finite ridge coefficients")


def logit_rescale(p, eps: float = EPS):
    """Clamp to ``[eps, 1 - eps]``, take log-odds, min-max rescale.

    A constant column maps to 0.5.
    """
    is_series = isinstance(p, pd.Series)
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(~np.isfinite(arr)):
        raise ValueError("probabilities must be finite and in [0, 1]")
    z = logit(np.clip(arr, eps, 1 - eps))
    lo, hi = z.min(), z.max()
    out = np.full_like(z, 0.5) if hi == lo else (z - lo) / (hi - lo)
    return pd.Series(out, index=p.index, name=p.name) if is_series else out


def stack_matrix(probs: pd.DataFrame, eps: float = EPS) -> pd.DataFrame:
    """Rescaled scores of every column over the rows where all are present."""
    aligned = probs.dropna()
    return aligned.apply(lambda col: logit_rescale(col, eps))


def ridge_fit(X, y, lam: float = 1.0) -> RidgeCoefficients:
    """Minimise ``|y - X b|^2 + lam |b|^2`` (no intercept)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, J) with n matching y")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    J = X.shape[1]
    A = np.vstack([X, np.sqrt(lam) * np.eye(J)])
    b = np.concatenate([y, np.zeros(J)])
    beta = np.linalg.lstsq(A, b, rcond=None)[0]
    return RidgeCoefficients(beta, lam)


def ensemble_predict(coeffs: RidgeCoefficients, X_row):
    return np.clip(np.asarray(X_row, dtype=float) @ coeffs.beta, 0.0, 1.0)


def online_stack(probs: pd.DataFrame, target: pd.Series, lam: float = 1.0,
                 warmup: int = WARMUP, window: int | None = None,
                 eps: float = EPS) -> tuple[pd.Series, pd.DataFrame]:
    """Refit at every step on the trailing labelled history and predict.

    ``probs`` rows are decision times; ``target`` holds the tail indicator of
    the period after each decision (1 when the next loss breaks the target).
    The prediction at row ``k`` only uses targets of rows ``< k`` and the
    rescaling statistics of rows ``<= k``, so no future information enters.
    Returns the meta probabilities and the coefficient history.
    """
    aligned = probs.dropna()
    y = target.reindex(aligned.index).to_numpy(dtype=float)
    P = np.clip(aligned.to_numpy(dtype=float), eps, 1 - eps)
    Z = logit(P)
    n, J = Z.shape
    preds = np.full(n, np.nan)
    betas = np.full((n, J), np.nan)
    for k in range(warmup, n):
        lo = 0 if window is None else max(0, k - window)
        block = Z[lo:k + 1]
        mn, mx = block.min(0), block.max(0)
        span = np.where(mx > mn, mx - mn, 1.0)
        scaled = np.where(mx > mn, (block - mn) / span, 0.5)
        hist = scaled[:-1]
        y_hist = y[lo:k]
        ok = np.isfinite(y_hist)
        coeffs = ridge_fit(hist[ok], y_hist[ok], lam)
        betas[k] = coeffs.beta
        preds[k] = ensemble_predict(coeffs, scaled[-1])
    idx = aligned.index
    beta_frame = pd.DataFrame(betas, index=idx, columns=[f"beta_{j + 1}" for j in range(J)])
    return pd.Series(preds, index=idx, name="p").iloc[warmup:], beta_frame.iloc[warmup:]
