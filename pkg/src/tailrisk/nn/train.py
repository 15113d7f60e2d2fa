"""Mini-batch Adam training and class-2 probability extraction."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .features import FeatureMatrix
from .model import NetWeights, draw_masks, forward, loss_and_grad, param_shapes


class TrainingError(RuntimeError):
    def __init__(self, msg: str, epoch: int, batch: int):
        super().__init__(f"{msg} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    dropout: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    to_dict = asdict


@dataclass
class TrainResult:
    weights: NetWeights
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def _mean_loss(weights: NetWeights, x, y) -> float:
    p = forward(weights, x)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))


def fit_arrays(x, y, arch: str, config: TrainConfig | None = None,
               init: NetWeights | None = None) -> TrainResult:
    """Train on arrays. The chronological tail ``val_fraction`` is held out
    for early stopping; the best validation epoch's weights are returned."""
    config = config or TrainConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(x) != len(y):
        raise ValueError("features and labels differ in length")
    if len(y) == 0:
        raise ValueError("no training data")
    if np.any((y < 0) | (y > 2)):
        raise ValueError("labels must be in {0, 1, 2}")
    n_val = int(len(y) * config.val_fraction) if config.patience else 0
    n_fit = len(y) - n_val
    if n_fit < 1:
        raise ValueError("no training rows left after the validation split")
    xt, yt, xv, yv = x[:n_fit], y[:n_fit], x[n_fit:], y[n_fit:]

    rng = np.random.default_rng(config.seed)
    weights = init if init is not None else NetWeights.initial(arch, config.seed, config.dropout)
    weights = NetWeights(arch, {k: v.copy() for k, v in weights.params.items()}, config.dropout,
                         config.seed, config.to_dict())
    names = list(param_shapes(arch))
    m = {k: np.zeros_like(weights.params[k]) for k in names}
    v = {k: np.zeros_like(weights.params[k]) for k in names}
    step = 0
    result = TrainResult(weights)
    best, best_params, stale = np.inf, None, 0

    for epoch in range(config.epochs):
        order = rng.permutation(n_fit)
        total = 0.0
        for b, start in enumerate(range(0, n_fit, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = xt[idx], yt[idx]
            masks = draw_masks(weights, xb, rng) if config.dropout > 0 else None
            loss, grad = loss_and_grad(weights, xb, yb, masks)
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch, b)
            if not all(np.isfinite(grad[k]).all() for k in names):
                raise TrainingError("non-finite gradient", epoch, b)
            total += loss * len(idx)
            step += 1
            lr_t = config.learning_rate * np.sqrt(1 - config.beta2 ** step) / (1 - config.beta1 ** step)
            for k in names:
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * grad[k]
                v[k] = config.beta2 * v[k] + (1 - config.beta2) * grad[k] ** 2
                weights.params[k] -= lr_t * m[k] / (np.sqrt(v[k]) + config.eps)
        result.train_loss.append(total / n_fit)
        if n_val:
            vl = _mean_loss(weights, xv, yv)
            result.val_loss.append(vl)
            if vl < best:
                best, stale, result.best_epoch = vl, 0, epoch
                best_params = {k: a.copy() for k, a in weights.params.items()}
            else:
                stale += 1
                if stale >= config.patience:
                    break
        else:
            result.best_epoch = epoch
    if best_params is not None:
        weights.params = best_params
    return result


def training_pairs(features: FeatureMatrix, labels: pd.Series) -> tuple[FeatureMatrix, np.ndarray]:
    """Pair the features at ``t`` with the label of the following period."""
    nxt = labels.shift(-1).reindex(features.index)
    keep = nxt.notna().to_numpy()
    return features.take(np.flatnonzero(keep)), nxt[keep].to_numpy(dtype=int)


def train(features: FeatureMatrix, labels: pd.Series, config: TrainConfig | None = None,
          arch: str | None = None, init: NetWeights | None = None) -> TrainResult:
    arch = arch or features.variant
    fm, y = training_pairs(features, labels)
    if len(y) == 0:
        raise ValueError("no overlap between features and next-period labels")
    return fit_arrays(fm.values, y, arch, config, init)


def predict_p2(weights: NetWeights, features: FeatureMatrix) -> pd.Series:
    """Probability of the loss-tail class for the period after each row."""
    p = forward(weights, features.values)[:, 2]
    return pd.Series(p, index=features.index, name="p")
