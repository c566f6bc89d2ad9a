"""Batched classification episodes.

An episode picks one of the four objects, makes a uniformly random first
glance and then ``S - 1`` glances drawn from the location policy computed
after the previous glance (or uniformly, for the random-location variant).
The class read after the final glance decides the reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .model import HapticAttentionModel, LocationPolicy
from .touch import N_OBJECTS

HALF_PI = np.pi / 2
MAX_RESAMPLES = 1000


class ResampleLimitError(RuntimeError):
    pass


def q_to_pose(q: np.ndarray) -> np.ndarray:
    """Normalized ``(q_x, q_phi)`` in [-1, 1]^2 to the physical pose ``(x, phi)``."""
    pose = np.array(q, dtype=np.float64, copy=True)
    pose[..., 1] *= HALF_PI
    return pose


def sample_q(mu: np.ndarray, sigma: np.ndarray, rng: np.random.Generator,
             max_tries: int = MAX_RESAMPLES) -> np.ndarray:
    """Gaussian draws, each coordinate resampled until it lands in [-1, 1]."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    q = rng.normal(mu, sigma)
    bad = np.abs(q) > 1.0
    tries = 1
    while np.any(bad):
        if tries >= max_tries:
            raise ResampleLimitError(
                f"{int(bad.sum())} coordinates still outside [-1, 1] after {max_tries} draws")
        q[bad] = rng.normal(mu[bad], sigma[bad])
        bad = np.abs(q) > 1.0
        tries += 1
    return q


def sample_pose(policy: LocationPolicy, rng: np.random.Generator):
    """Draw one pose ``(x, phi)`` from a single (unbatched) policy."""
    q = sample_q(policy.mu, policy.sigma, rng)
    return float(q[0]), float(q[1] * HALF_PI)


def uniform_q(batch: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(batch, 2))


@dataclass
class EpisodeTrace:
    """One episode pulled out of an :class:`EpisodeBatch`."""

    label: int
    poses: np.ndarray        # (S, 2)
    q: np.ndarray            # (S, 2) normalized samples
    mu: np.ndarray           # (S, 2) policy after each glance
    sigma: np.ndarray        # (S, 2)
    hidden: np.ndarray       # (S, H) core outputs
    probs: np.ndarray        # (S, C)
    baseline: np.ndarray     # (S,)
    reward: float
    first_random: bool = True


@dataclass
class EpisodeBatch:
    objects: np.ndarray      # (B,)
    q: np.ndarray            # (S, B, 2)
    poses: np.ndarray        # (S, B, 2)
    mu: np.ndarray           # (S, B, 2)
    sigma: np.ndarray        # (S, B, 2)
    probs: np.ndarray        # (S, B, C)
    baseline: np.ndarray     # (S, B)
    core_out: np.ndarray     # (S, B, H)
    caches: List[dict]
    location: str

    @property
    def glances(self) -> int:
        return self.q.shape[0]

    @property
    def size(self) -> int:
        return self.objects.shape[0]

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.probs[-1], axis=-1)

    @property
    def rewards(self) -> np.ndarray:
        return (self.predictions == self.objects).astype(np.float64)

    def episode(self, k: int) -> EpisodeTrace:
        return EpisodeTrace(int(self.objects[k]), self.poses[:, k], self.q[:, k], self.mu[:, k],
                            self.sigma[:, k], self.core_out[:, k], self.probs[:, k],
                            self.baseline[:, k], float(self.rewards[k]))


def rollout_episodes(model: HapticAttentionModel, env, glances: int, task_rng: np.random.Generator,
                     policy_rng: Optional[np.random.Generator] = None, batch_size: int = 64,
                     location: str = "learned", objects: Optional[np.ndarray] = None,
                     forced_q: Optional[np.ndarray] = None, keep_cache: bool = True) -> EpisodeBatch:
    """Run ``batch_size`` episodes of ``glances`` glances each.

    ``task_rng`` draws the objects and the first glance, ``policy_rng`` all
    later glances; keeping them apart lets variants share their first
    glances. ``forced_q`` (S, B, 2) replays recorded glances instead of
    sampling.
    """
    if glances < 1:
        raise ValueError("need at least one glance")
    if location not in ("learned", "uniform"):
        raise ValueError(f"location must be 'learned' or 'uniform', got {location!r}")
    policy_rng = policy_rng if policy_rng is not None else task_rng
    if objects is None:
        objects = task_rng.integers(0, N_OBJECTS, size=batch_size)
    objects = np.asarray(objects, dtype=np.int64)
    B = objects.shape[0]
    first = uniform_q(B, task_rng)
    H = model.config.hidden
    C = model.config.n_classes
    shape = (glances, B)
    out = dict(q=np.empty(shape + (2,)), poses=np.empty(shape + (2,)), mu=np.empty(shape + (2,)),
               sigma=np.empty(shape + (2,)), probs=np.empty(shape + (C,)), baseline=np.empty(shape),
               core_out=np.empty(shape + (H,)))
    caches = []
    state = model.initial_state(B)
    q = first if forced_q is None else forced_q[0]
    for s in range(glances):
        pose = q_to_pose(q)
        pressure = env.glance(objects, pose)
        step = model.step(pressure, pose, state)
        state = step.state
        out["q"][s] = q
        out["poses"][s] = pose
        out["mu"][s] = step.policy.mu
        out["sigma"][s] = step.policy.sigma
        out["probs"][s] = step.probs
        out["baseline"][s] = step.baseline
        out["core_out"][s] = step.core_out
        if keep_cache:
            caches.append(step.cache)
        if s + 1 < glances:
            if forced_q is not None:
                q = forced_q[s + 1]
            elif location == "learned":
                q = sample_q(step.policy.mu, step.policy.sigma, policy_rng)
            else:
                q = uniform_q(B, policy_rng)
    return EpisodeBatch(objects=objects, caches=caches, location=location, **out)
