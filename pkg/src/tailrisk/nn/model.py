"""Numpy MLP and stacked-LSTM 3-class classifiers with hand-written backprop.

MLP: 8 -> 16 -> 4 -> 2 -> 3, tanh hidden units, softmax output.
LSTM: two recurrent layers (16 then 4 units) over 24 steps, then dense 2
(tanh) and softmax 3. Inverted dropout follows the first two layers in both.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax

N_FEATURES = 8
N_CLASSES = 3
MLP_SIZES = (N_FEATURES, 16, 4, 2, N_CLASSES)
LSTM_UNITS = (16, 4)
DENSE = 2
MAGIC = b"TRNN"


def param_shapes(arch: str) -> dict[str, tuple[int, ...]]:
    if arch == "mlp":
        shapes = {}
        for k, (a, b) in enumerate(zip(MLP_SIZES[:-1], MLP_SIZES[1:]), start=1):
            shapes[f"W{k}"] = (a, b)
            shapes[f"b{k}"] = (b,)
        return shapes
    if arch == "lstm":
        h1, h2 = LSTM_UNITS
        return {
            "Wx1": (N_FEATURES, 4 * h1), "Wh1": (h1, 4 * h1), "bl1": (4 * h1,),
            "Wx2": (h1, 4 * h2), "Wh2": (h2, 4 * h2), "bl2": (4 * h2,),
            "W3": (h2, DENSE), "b3": (DENSE,),
            "W4": (DENSE, N_CLASSES), "b4": (N_CLASSES,),
        }
    raise ValueError(f"unknown architecture {arch!r}")


def init_params(arch: str, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform fan-in initialisation; LSTM forget-gate biases start at 1."""
    params = {}
    for name, shape in param_shapes(arch).items():
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    if arch == "lstm":
        for name, h in (("bl1", LSTM_UNITS[0]), ("bl2", LSTM_UNITS[1])):
            params[name][h:2 * h] = 1.0
    return params


@dataclass
class NetWeights:
    arch: str
    params: dict[str, np.ndarray]
    dropout: float = 0.2
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.arch)
        if set(expected) != set(self.params):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def initial(cls, arch: str, seed: int = 0, dropout: float = 0.2) -> "NetWeights":
        return cls(arch, init_params(arch, np.random.default_rng(seed)), dropout, seed)

    @classmethod
    def zeros(cls, arch: str) -> "NetWeights":
        return cls(arch, {k: np.zeros(s) for k, s in param_shapes(arch).items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in param_shapes(self.arch)])

    def with_flat(self, theta: np.ndarray) -> "NetWeights":
        out, pos = {}, 0
        for name, shape in param_shapes(self.arch).items():
            size = int(np.prod(shape))
            out[name] = np.array(theta[pos:pos + size], dtype=float).reshape(shape)
            pos += size
        return NetWeights(self.arch, out, self.dropout, self.seed, dict(self.config))

    def save(self, path) -> None:
        """Binary checkpoint: magic, header length, JSON header, float64 payload."""
        header = json.dumps({
            "arch": self.arch,
            "shapes": {k: list(v) for k, v in param_shapes(self.arch).items()},
            "order": list(param_shapes(self.arch)),
            "dropout": self.dropout,
            "seed": self.seed,
            "config": self.config,
        }, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "NetWeights":
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise ValueError(f"{path} is not a network checkpoint")
            (size,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(size))
            theta = np.frombuffer(fh.read(), dtype="<f8")
        shell = cls.zeros(header["arch"])
        if theta.size != shell.flat().size:
            raise ValueError("checkpoint payload size does not match its header")
        w = shell.with_flat(theta)
        w.dropout, w.seed, w.config = header["dropout"], header["seed"], header["config"]
        return w


def _check_input(arch: str, x: np.ndarray) -> None:
    if arch == "mlp" and (x.ndim != 2 or x.shape[1] != N_FEATURES):
        raise ValueError(f"mlp expects input (n, {N_FEATURES}), got {x.shape}")
    if arch == "lstm" and (x.ndim != 3 or x.shape[2] != N_FEATURES):
        raise ValueError(f"lstm expects input (n, steps, {N_FEATURES}), got {x.shape}")


def draw_masks(weights: NetWeights, x: np.ndarray, rng: np.random.Generator) -> tuple:
    """Inverted-dropout masks (kept units scaled by 1 / keep)."""
    keep = 1.0 - weights.dropout
    n = x.shape[0]
    if weights.arch == "mlp":
        shapes = ((n, MLP_SIZES[1]), (n, MLP_SIZES[2]))
    else:
        shapes = ((n, x.shape[1], LSTM_UNITS[0]), (n, LSTM_UNITS[1]))
    return tuple((rng.random(s) < keep) / keep for s in shapes)


def _lstm_forward(x, Wx, Wh, b):
    n, steps, _ = x.shape
    h_dim = Wh.shape[0]
    h = np.zeros((n, h_dim))
    c = np.zeros((n, h_dim))
    hs = np.empty((n, steps, h_dim))
    cache = []
    xw = x @ Wx + b
    for t in range(steps):
        z = xw[:, t] + h @ Wh
        i = expit(z[:, :h_dim])
        f = expit(z[:, h_dim:2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
        o = expit(z[:, 3 * h_dim:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h_prev = h
        h = o * tc
        hs[:, t] = h
        cache.append((i, f, g, o, c_prev, tc, h_prev))
    return hs, cache


def _lstm_backward(x, Wx, Wh, cache, dhs):
    n, steps, _ = x.shape
    h_dim = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * h_dim)
    dx = np.empty_like(x)
    dh_next = np.zeros((n, h_dim))
    dc_next = np.zeros((n, h_dim))
    for t in range(steps - 1, -1, -1):
        i, f, g, o, c_prev, tc, h_prev = cache[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
        dWx += x[:, t].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ Wx.T
        dh_next = dz @ Wh.T
        dc_next = dc * f
    return dx, dWx, dWh, db


def _forward(weights: NetWeights, x: np.ndarray, masks):
    p = weights.params
    if weights.arch == "mlp":
        a1 = np.tanh(x @ p["W1"] + p["b1"])
        h1 = a1 * masks[0] if masks else a1
        a2 = np.tanh(h1 @ p["W2"] + p["b2"])
        h2 = a2 * masks[1] if masks else a2
        h3 = np.tanh(h2 @ p["W3"] + p["b3"])
        probs = softmax(h3 @ p["W4"] + p["b4"], axis=1)
        return probs, (a1, h1, a2, h2, h3)
    seq1, c1 = _lstm_forward(x, p["Wx1"], p["Wh1"], p["bl1"])
    in2 = seq1 * masks[0] if masks else seq1
    seq2, c2 = _lstm_forward(in2, p["Wx2"], p["Wh2"], p["bl2"])
    last = seq2[:, -1]
    h2 = last * masks[1] if masks else last
    h3 = np.tanh(h2 @ p["W3"] + p["b3"])
    probs = softmax(h3 @ p["W4"] + p["b4"], axis=1)
    return probs, (c1, in2, c2, seq2.shape, h2, h3)


def forward(weights: NetWeights, x, mode: str = "eval", dropout_rng: np.random.Generator | None = None,
            masks=None) -> np.ndarray:
    """Class probabilities, shape (n, 3).

    In ``train`` mode dropout masks are drawn from ``dropout_rng`` unless
    given explicitly; ``eval`` mode ignores both.
    """
    x = np.asarray(x, dtype=float)
    _check_input(weights.arch, x)
    if mode == "eval":
        masks = None
    elif mode == "train":
        if masks is None:
            if dropout_rng is None:
                raise ValueError("train mode needs dropout_rng or explicit masks")
            masks = draw_masks(weights, x, dropout_rng)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return _forward(weights, x, masks)[0]


def loss_and_grad(weights: NetWeights, x, y, masks=None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean categorical cross-entropy and its gradient for fixed dropout masks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    _check_input(weights.arch, x)
    n = len(y)
    p = weights.params
    probs, cache = _forward(weights, x, masks)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))))
    dz4 = probs.copy()
    dz4[np.arange(n), y] -= 1.0
    dz4 /= n
    g = {}
    if weights.arch == "mlp":
        a1, h1, a2, h2, h3 = cache
        g["W4"], g["b4"] = h3.T @ dz4, dz4.sum(0)
        dz3 = (dz4 @ p["W4"].T) * (1 - h3 ** 2)
        g["W3"], g["b3"] = h2.T @ dz3, dz3.sum(0)
        dh2 = dz3 @ p["W3"].T
        dz2 = (dh2 * masks[1] if masks else dh2) * (1 - a2 ** 2)
        g["W2"], g["b2"] = h1.T @ dz2, dz2.sum(0)
        dh1 = dz2 @ p["W2"].T
        dz1 = (dh1 * masks[0] if masks else dh1) * (1 - a1 ** 2)
        g["W1"], g["b1"] = x.T @ dz1, dz1.sum(0)
        return loss, g
    c1, in2, c2, seq2_shape, h2, h3 = cache
    g["W4"], g["b4"] = h3.T @ dz4, dz4.sum(0)
    dz3 = (dz4 @ p["W4"].T) * (1 - h3 ** 2)
    g["W3"], g["b3"] = h2.T @ dz3, dz3.sum(0)
    dh2 = dz3 @ p["W3"].T
    dseq2 = np.zeros(seq2_shape)
    dseq2[:, -1] = dh2 * masks[1] if masks else dh2
    din2, g["Wx2"], g["Wh2"], g["bl2"] = _lstm_backward(in2, p["Wx2"], p["Wh2"], c2, dseq2)
    dseq1 = din2 * masks[0] if masks else din2
    _, g["Wx1"], g["Wh1"], g["bl1"] = _lstm_backward(x, p["Wx1"], p["Wh1"], c1, dseq1)
    return loss, g
