"""Small differentiable building blocks: dense layers, activations, an LSTM
cell with explicit backward passes, He-normal initialization and SGD with
Nesterov momentum.

Everything works on float64 arrays with a leading batch axis. Weight
matrices are stored ``[out, in]`` so a dense layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

DTYPE = np.float64

ACTIVATIONS = ("relu", "tanh", "softplus", "softmax", "sigmoid", "identity")


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient block contains NaN or inf."""


# ---------------------------------------------------------------------------
# initialization


def he_normal_init(fan_in: int, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw a weight block from N(0, 2 / fan_in)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(DTYPE)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    # tanh form: overflow-free and several times faster than exp-based variants here
    out = np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softmax(x: np.ndarray) -> np.ndarray:
    # a gap beyond the float range becomes -inf, whose exp is an exact 0
    with np.errstate(over="ignore"):
        z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def activation_apply(kind: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "softplus":
        return softplus(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x)
    if kind == "identity":
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, x: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the pre-activation ``x`` given output ``y`` and upstream ``dy``."""
    if kind == "relu":
        return dy * (x > 0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "softplus":
        return dy * sigmoid(x)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    if kind == "identity":
        return dy
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# dense layers


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match layer in-dimension {W.shape[1]}")
    return x @ W.T + b


def dense_backward(W: np.ndarray, x: np.ndarray, dy: np.ndarray):
    """Return ``(dx, dW, db)`` for a batched dense layer."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W, dy2.T @ x2, dy2.sum(axis=0)


@dataclass
class DenseLayer:
    """A dense layer holding its own weights and the context of the last call."""

    weights: np.ndarray
    bias: np.ndarray
    _input: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be [out, in] and bias [out]")

    @classmethod
    def he(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseLayer":
        return cls(he_normal_init(n_in, (n_out, n_in), rng), np.zeros(n_out, dtype=DTYPE))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        self._input = x
        return dense_forward(self.weights, self.bias, x)

    def backward(self, dy: np.ndarray):
        if self._input is None:
            raise RuntimeError("backward called before apply")
        return dense_backward(self.weights, self._input, dy)


def dense_apply(layer: DenseLayer, x) -> np.ndarray:
    return layer.apply(x)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmState:
    cell: np.ndarray
    hidden: np.ndarray

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(np.zeros((batch, hidden), DTYPE), np.zeros((batch, hidden), DTYPE))


@dataclass
class LstmCache:
    xh: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray        # sigmoid(i, f, o) and tanh(g), stacked
    tanh_c: np.ndarray


def lstm_init(n_in: int, hidden: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Stacked gate weights ``W = [W_x | W_h]`` of shape (4H, in + H).

    Gate rows are ordered input, forget, output, candidate. The input and
    recurrent halves use their own fan-in for He initialization.
    """
    Wx = he_normal_init(n_in, (4 * hidden, n_in), rng)
    Wh = he_normal_init(hidden, (4 * hidden, hidden), rng)
    return {"W": np.concatenate([Wx, Wh], axis=1), "b": np.zeros(4 * hidden, dtype=DTYPE)}


def lstm_step(W: np.ndarray, b: np.ndarray, state: LstmState, x: np.ndarray):
    """One LSTM update. Returns ``(new_state, hidden, cache)``."""
    H = state.hidden.shape[-1]
    if W.shape != (4 * H, x.shape[-1] + H):
        raise ValueError(f"LSTM weights {W.shape} do not fit input {x.shape[-1]} / hidden {H}")
    xh = np.concatenate([x, state.hidden], axis=-1)
    z = xh @ W.T
    z += b
    gates = np.empty_like(z)
    sigmoid(z[:, :3 * H], out=gates[:, :3 * H])
    np.tanh(z[:, 3 * H:], out=gates[:, 3 * H:])
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    c = f * state.cell + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return LstmState(c, h), h, LstmCache(xh, state.cell, gates, tanh_c)


def lstm_step_backward(W: np.ndarray, cache: LstmCache, dh: np.ndarray, dc: np.ndarray):
    """Backward through one step.

    ``dh``/``dc`` are the total gradients arriving at this step's hidden and
    cell outputs. Returns ``(dx, dh_prev, dc_prev, {"W", "b"})``.
    """
    H = cache.c_prev.shape[-1]
    gates = cache.gates
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    dc = dc + dh * o * (1.0 - cache.tanh_c ** 2)
    dz = np.empty_like(gates)
    dz[:, :H] = dc * g
    dz[:, H:2 * H] = dc * cache.c_prev
    dz[:, 2 * H:3 * H] = dh * cache.tanh_c
    dz[:, :3 * H] *= gates[:, :3 * H] * (1.0 - gates[:, :3 * H])
    dz[:, 3 * H:] = dc * i * (1.0 - g * g)
    dxh = dz @ W
    grads = {"W": dz.T @ cache.xh, "b": dz.sum(axis=0)}
    n_in = W.shape[1] - H
    return dxh[:, :n_in], dxh[:, n_in:], dc * f, grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    velocity: Dict[str, np.ndarray]
    momentum: float
    lr: float


class NesterovSGD:
    """SGD with Nesterov momentum.

    Update per block::

        v <- m * v - lr * g
        p <- p + m * v - lr * g
    """

    def __init__(self, params: Mapping[str, np.ndarray], lr: float, momentum: float = 0.9,
                 clip_norm: Optional[float] = None):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.state = OptimizerState(
            {k: np.zeros_like(v) for k, v in params.items()}, float(momentum), float(lr))
        self.clip_norm = clip_norm

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float):
        if value <= 0:
            raise ValueError("learning rate must be positive")
        self.state.lr = float(value)

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        check_finite(grads)
        scale = 1.0
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        m, lr = self.state.momentum, self.state.lr
        for name, g in grads.items():
            v = self.state.velocity[name]
            if v.shape != g.shape or params[name].shape != g.shape:
                raise ValueError(f"shape mismatch for block {name!r}")
            lg = (lr * scale) * g
            v *= m
            v -= lg
            p = params[name]
            p += m * v
            p -= lg


def sgd_nesterov_step(opt: NesterovSGD, params: Dict[str, np.ndarray],
                      grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    opt.step(params, grads)
    return params


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in block {name!r}")


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_check(
    loss_fn: Callable[[Dict[str, np.ndarray]], Tuple[float, Mapping[str, np.ndarray]]],
    params: Dict[str, np.ndarray],
    epsilon: float = 1e-5,
    n_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-8,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be deterministic.
    Blocks missing from ``grads`` are taken to have zero gradient. When
    ``n_coords`` is given, that many coordinates are drawn uniformly over all
    parameters; otherwise every coordinate is checked.

    Returns the worst ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, grads = loss_fn(params)
    names = list(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if n_coords is None or n_coords >= total:
        flat = np.arange(total)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        flat = rng.choice(total, size=n_coords, replace=False)

    worst = 0.0
    for idx in flat:
        bi = int(np.searchsorted(offsets, idx, side="right") - 1)
        name = names[bi]
        local = int(idx - offsets[bi])
        block = params[name].reshape(-1)
        orig = block[local]
        block[local] = orig + epsilon
        lp, _ = loss_fn(params)
        block[local] = orig - epsilon
        lm, _ = loss_fn(params)
        block[local] = orig
        numeric = (lp - lm) / (2.0 * epsilon)
        g = grads.get(name)
        analytic = 0.0 if g is None else float(g.reshape(-1)[local])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
