"""Finite-difference checks of the analytic gradients.

The sampled glances of a reference rollout are frozen and replayed, so the
loss is a smooth deterministic function of the parameters. The REINFORCE
advantages are held fixed as well, which makes the hybrid surrogate's
gradient exactly what the trainer applies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .envs import make_env
from .model import HapticAttentionModel, ModelConfig
from .rollout import rollout_episodes
from .trainer import advantages, baseline_loss, hybrid_gradient, hybrid_loss_value


@dataclass
class GradcheckReport:
    hybrid: float
    baseline: float
    lstm: float
    n_coords: int

    def passed(self, tol: float = 1e-4, lstm_tol: float = 1e-5) -> bool:
        return self.hybrid < tol and self.baseline < tol and self.lstm < lstm_tol


def _perturbed_model(config: ModelConfig, seed: int, scale: float = 0.1) -> HapticAttentionModel:
    """Random weights and biases, so no block sits at an all-zero corner."""
    model = HapticAttentionModel(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for v in model.params.values():
        v += scale * rng.standard_normal(v.shape)
    return model


def hybrid_check(config: ModelConfig = ModelConfig(), glances: int = 3, batch: int = 8,
                 beta: float = 0.4, n_coords: int = 200, seed: int = 0, env=None,
                 ce_mode: str = "final") -> float:
    env = env or make_env("dataset")
    model = _perturbed_model(config, seed)
    ref = rollout_episodes(model, env, glances, np.random.default_rng(seed), batch_size=batch)
    adv = advantages(ref)
    # a constant offset keeps the advantages away from zero and from each other
    adv = adv + np.linspace(0.5, 1.5, adv.size).reshape(adv.shape)

    def loss_fn(params):
        m = HapticAttentionModel(config, params=params)
        b = rollout_episodes(m, env, glances, np.random.default_rng(0), objects=ref.objects,
                             forced_q=ref.q)
        return hybrid_loss_value(b, beta, adv, ce_mode), hybrid_gradient(m, b, beta, ce_mode, adv)

    return nn.finite_difference_check(loss_fn, model.params, 1e-5, n_coords,
                                      np.random.default_rng(seed + 2))


def baseline_check(config: ModelConfig = ModelConfig(), glances: int = 3, batch: int = 8,
                   seed: int = 0, env=None) -> float:
    env = env or make_env("dataset")
    model = _perturbed_model(config, seed)
    ref = rollout_episodes(model, env, glances, np.random.default_rng(seed), batch_size=batch)
    rewards = ref.rewards

    def loss_fn(params):
        m = HapticAttentionModel(config, params=params)
        b = rollout_episodes(m, env, glances, np.random.default_rng(0), objects=ref.objects,
                             forced_q=ref.q)
        # the reward is piecewise constant in the parameters; hold it fixed
        return baseline_loss(b, rewards=rewards)

    head = {k: model.params[k] for k in ("baseline.W", "baseline.b")}

    def head_loss(p):
        full = dict(model.params)
        full.update(p)
        return loss_fn(full)

    return nn.finite_difference_check(head_loss, head, 1e-5, None)


def lstm_sequence_check(steps: int = 3, n_in: int = 4, hidden: int = 5, batch: int = 3,
                        seed: int = 0) -> float:
    """Sum-of-weighted-hiddens loss over an unrolled LSTM, all coordinates."""
    rng = np.random.default_rng(seed)
    params = nn.lstm_init(n_in, hidden, rng)
    params["b"] += 0.1 * rng.standard_normal(params["b"].shape)
    xs = rng.standard_normal((steps, batch, n_in))
    weights = rng.standard_normal((steps, batch, hidden))

    def loss_fn(p):
        state = nn.LstmState.zeros(batch, hidden)
        caches, loss = [], 0.0
        for t in range(steps):
            state, h, cache = nn.lstm_step(p["W"], p["b"], state, xs[t])
            caches.append(cache)
            loss += float(np.sum(weights[t] * h))
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dh = np.zeros((batch, hidden))
        dc = np.zeros((batch, hidden))
        for t in reversed(range(steps)):
            _, dh, dc, g = nn.lstm_step_backward(p["W"], caches[t], dh + weights[t], dc)
            grads["W"] += g["W"]
            grads["b"] += g["b"]
        return loss, grads

    return nn.finite_difference_check(loss_fn, params, 1e-5, None)


def run_gradcheck(n_coords: int = 200, seed: int = 0, env=None) -> GradcheckReport:
    env = env or make_env("dataset")
    return GradcheckReport(
        hybrid=hybrid_check(n_coords=n_coords, seed=seed, env=env),
        baseline=baseline_check(seed=seed, env=env),
        lstm=lstm_sequence_check(seed=seed),
        n_coords=n_coords,
    )
