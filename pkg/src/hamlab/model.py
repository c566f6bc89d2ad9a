"""The haptic attention network.

A glance ``(pressure, pose)`` passes through the tactile network, the
recurrent core (LSTM or a memory-less ReLU layer), and then three heads read
the core output: the classifier, the stochastic location policy and the
reward baseline. All functions take a leading batch axis.

Forward functions return a cache that the matching ``*_backward`` consumes;
gradients are accumulated into a dict keyed like ``params``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from . import nn
from .nn import DTYPE, LstmState, dense_backward, dense_forward

COMBINERS = ("multiply", "add", "concat1", "concat2")
CORES = ("lstm", "mlp")
N_CLASSES = 4
PRESSURE_DIM = 256
POSE_DIM = 2
# softplus underflows to 0 below about -745; keep sigma strictly positive
SIGMA_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ModelConfig:
    combiner: str = "concat2"
    core: str = "lstm"
    hidden: int = 256
    width: int = 64
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}, got {self.combiner!r}")
        if self.core not in CORES:
            raise ValueError(f"core must be one of {CORES}, got {self.core!r}")


def init_params(config: ModelConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """He-normal weights, zero biases. Block order is fixed for a given config."""
    W, H = config.width, config.hidden
    params: Dict[str, np.ndarray] = {}

    def dense(name, n_in, n_out):
        params[f"{name}.W"] = nn.he_normal_init(n_in, (n_out, n_in), rng)
        params[f"{name}.b"] = np.zeros(n_out, dtype=DTYPE)

    dense("tactile.pressure", PRESSURE_DIM, W)
    dense("tactile.pose", POSE_DIM, W)
    if config.combiner in ("concat1", "concat2"):
        dense("tactile.fuse1", 2 * W, W)
    if config.combiner == "concat2":
        dense("tactile.fuse2", W, W)
    if config.core == "lstm":
        for k, v in nn.lstm_init(W, H, rng).items():
            params[f"core.{k}"] = v
    else:
        dense("core", W, H)
    dense("loc.mu_hidden", H, W)
    dense("loc.mu_out", W, POSE_DIM)
    dense("loc.sigma_hidden", H, W)
    dense("loc.sigma_out", W, POSE_DIM)
    dense("classifier", H, config.n_classes)
    dense("baseline", H, 1)
    return params


def count_parameters(params: Dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def zero_grads(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _acc(grads, name, dW, db):
    grads[f"{name}.W"] += dW
    grads[f"{name}.b"] += db


def _dense(params, name, x):
    return dense_forward(params[f"{name}.W"], params[f"{name}.b"], x)


def _dense_back(params, grads, name, x, dy):
    dx, dW, db = dense_backward(params[f"{name}.W"], x, dy)
    _acc(grads, name, dW, db)
    return dx


# ---------------------------------------------------------------------------
# tactile network


def tactile_forward(params, pressure: np.ndarray, pose: np.ndarray, mode: str):
    """Fuse what (pressure) and where (pose) into a 64-wide feature."""
    a_pre = _dense(params, "tactile.pressure", pressure)
    a = np.maximum(a_pre, 0.0)
    c_pre = _dense(params, "tactile.pose", pose)
    c = np.maximum(c_pre, 0.0)
    cache = {"pressure": pressure, "pose": pose, "a_pre": a_pre, "a": a, "c_pre": c_pre, "c": c}
    if mode == "multiply":
        feat = a * c
    elif mode == "add":
        feat = a + c
    else:
        cat = np.concatenate([a, c], axis=-1)
        z1 = _dense(params, "tactile.fuse1", cat)
        feat = np.maximum(z1, 0.0)
        cache.update(cat=cat, z1=z1, f1=feat)
        if mode == "concat2":
            z2 = _dense(params, "tactile.fuse2", feat)
            feat = np.maximum(z2, 0.0)
            cache["z2"] = z2
    return feat, cache


def tactile_backward(params, grads, cache, dfeat: np.ndarray, mode: str) -> None:
    if mode == "multiply":
        da, dc = dfeat * cache["c"], dfeat * cache["a"]
    elif mode == "add":
        da, dc = dfeat, dfeat
    else:
        if mode == "concat2":
            dz2 = dfeat * (cache["z2"] > 0)
            dfeat = _dense_back(params, grads, "tactile.fuse2", cache["f1"], dz2)
        dz1 = dfeat * (cache["z1"] > 0)
        dcat = _dense_back(params, grads, "tactile.fuse1", cache["cat"], dz1)
        w = cache["a"].shape[-1]
        da, dc = dcat[..., :w], dcat[..., w:]
    _dense_back(params, grads, "tactile.pressure", cache["pressure"], da * (cache["a_pre"] > 0))
    _dense_back(params, grads, "tactile.pose", cache["pose"], dc * (cache["c_pre"] > 0))


# ---------------------------------------------------------------------------
# recurrent core


def core_step(params, variant: str, state: LstmState, feat: np.ndarray):
    """Returns ``(new_state, output, cache)``; the mlp core ignores ``state``."""
    if variant == "lstm":
        return nn.lstm_step(params["core.W"], params["core.b"], state, feat)
    z = _dense(params, "core", feat)
    out = np.maximum(z, 0.0)
    return state, out, {"feat": feat, "z": z}


def core_backward(params, grads, variant: str, cache, dout: np.ndarray, dh: np.ndarray, dc: np.ndarray):
    """Returns ``(dfeat, dh_prev, dc_prev)``."""
    if variant == "lstm":
        dx, dh_prev, dc_prev, g = nn.lstm_step_backward(params["core.W"], cache, dout + dh, dc)
        grads["core.W"] += g["W"]
        grads["core.b"] += g["b"]
        return dx, dh_prev, dc_prev
    dfeat = _dense_back(params, grads, "core", cache["feat"], dout * (cache["z"] > 0))
    return dfeat, dh, dc


# ---------------------------------------------------------------------------
# heads


class LocationPolicy(NamedTuple):
    mu: np.ndarray       # (..., 2) in [-1, 1], order (x, phi)
    sigma: np.ndarray    # (..., 2) > 0


def location_forward(params, core_out: np.ndarray):
    hm_pre = _dense(params, "loc.mu_hidden", core_out)
    hm = np.maximum(hm_pre, 0.0)
    mu = np.tanh(_dense(params, "loc.mu_out", hm))
    hs_pre = _dense(params, "loc.sigma_hidden", core_out)
    hs = np.maximum(hs_pre, 0.0)
    zs = _dense(params, "loc.sigma_out", hs)
    soft = nn.softplus(zs)
    sigma = np.maximum(soft, SIGMA_FLOOR)
    cache = {"h": core_out, "hm_pre": hm_pre, "hm": hm, "mu": mu,
             "hs_pre": hs_pre, "hs": hs, "zs": zs, "floored": soft < SIGMA_FLOOR}
    return LocationPolicy(mu, sigma), cache


def location_backward(params, grads, cache, dmu: np.ndarray, dsigma: np.ndarray) -> np.ndarray:
    dzm = dmu * (1.0 - cache["mu"] ** 2)
    dhm = _dense_back(params, grads, "loc.mu_out", cache["hm"], dzm)
    dh = _dense_back(params, grads, "loc.mu_hidden", cache["h"], dhm * (cache["hm_pre"] > 0))
    dzs = np.where(cache["floored"], 0.0, dsigma * nn.sigmoid(cache["zs"]))
    dhs = _dense_back(params, grads, "loc.sigma_out", cache["hs"], dzs)
    dh += _dense_back(params, grads, "loc.sigma_hidden", cache["h"], dhs * (cache["hs_pre"] > 0))
    return dh


def classify_logits(params, core_out: np.ndarray) -> np.ndarray:
    return _dense(params, "classifier", core_out)


def predict(probs: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ``np.argmax`` already breaks ties toward lower index."""
    return np.argmax(probs, axis=-1)


def classify(params, core_out: np.ndarray):
    probs = nn.softmax(classify_logits(params, core_out))
    return probs, predict(probs)


def baseline_value(params, core_out: np.ndarray) -> np.ndarray:
    return _dense(params, "baseline", core_out)[..., 0]


# ---------------------------------------------------------------------------
# one glance end to end


class StepOutput(NamedTuple):
    state: LstmState
    core_out: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    policy: LocationPolicy
    baseline: np.ndarray
    cache: dict


class HapticAttentionModel:
    """Parameters plus the wiring for one configuration."""

    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0,
                 params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config or ModelConfig()
        if params is None:
            params = init_params(self.config, np.random.default_rng(seed))
        self.params = params

    @property
    def n_parameters(self) -> int:
        return count_parameters(self.params)

    def initial_state(self, batch: int) -> LstmState:
        return LstmState.zeros(batch, self.config.hidden)

    def step(self, pressure: np.ndarray, pose: np.ndarray, state: LstmState) -> StepOutput:
        p = self.params
        feat, t_cache = tactile_forward(p, pressure, pose, self.config.combiner)
        new_state, out, c_cache = core_step(p, self.config.core, state, feat)
        logits = classify_logits(p, out)
        probs = nn.softmax(logits)
        policy, l_cache = location_forward(p, out)
        base = baseline_value(p, out)
        cache = {"tactile": t_cache, "core": c_cache, "loc": l_cache, "out": out}
        return StepOutput(new_state, out, logits, probs, policy, base, cache)

    def backward(self, caches: List[dict], dlogits: List[Optional[np.ndarray]],
                 dmu: List[Optional[np.ndarray]], dsigma: List[Optional[np.ndarray]],
                 location_to_core: bool = True) -> Dict[str, np.ndarray]:
        """Backpropagate head gradients through time.

        Each list has one entry per glance (``None`` = no gradient from that
        head at that glance). The baseline head is trained on its own and is
        not reached from here. With ``location_to_core=False`` the location
        gradient stops at the location heads.
        """
        p = self.params
        grads = zero_grads(p)
        S = len(caches)
        batch, hidden = caches[0]["out"].shape
        dh = np.zeros((batch, hidden))
        dc = np.zeros((batch, hidden))
        for s in reversed(range(S)):
            cache = caches[s]
            out = cache["out"]
            dout = np.zeros_like(out)
            if dlogits[s] is not None:
                dout += _dense_back(p, grads, "classifier", out, dlogits[s])
            if dmu[s] is not None or dsigma[s] is not None:
                zero = np.zeros((batch, POSE_DIM))
                dloc = location_backward(p, grads, cache["loc"],
                                         zero if dmu[s] is None else dmu[s],
                                         zero if dsigma[s] is None else dsigma[s])
                if location_to_core:
                    dout += dloc
            dfeat, dh, dc = core_backward(p, grads, self.config.core, cache["core"], dout, dh, dc)
            tactile_backward(p, grads, cache["tactile"], dfeat, self.config.combiner)
        return grads

    def manifest(self) -> str:
        lines = [f"core = {self.config.core}", f"combiner = {self.config.combiner}",
                 f"hidden = {self.config.hidden}", f"width = {self.config.width}"]
        for k, v in self.params.items():
            lines.append(f"block {k} {'x'.join(map(str, v.shape))} {v.size}")
        lines.append(f"total_parameters = {self.n_parameters}")
        return "\n".join(lines) + "\n"
