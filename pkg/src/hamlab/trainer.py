"""Hybrid REINFORCE / cross-entropy training.

Per step a fresh batch of episodes is rolled out. The classifier gets the
categorical cross-entropy of the final glance; the location heads get the
REINFORCE signal ``beta * (R_s - b_s) * zeta`` injected as output gradients
at mu and sigma and backpropagated through the whole network. The baseline
head is fitted separately by squared error on every sub-sequence.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from . import nn
from .checkpoint import save_checkpoint
from .model import HapticAttentionModel, ModelConfig
from .rollout import EpisodeBatch, ResampleLimitError, rollout_episodes

LOG_COLUMNS = ("step", "lr", "beta", "mean_reward", "hybrid_loss", "baseline_loss",
               "snapshot_accuracy", "snapshot_averaged_accuracy")
BASELINE_BLOCKS = ("baseline.W", "baseline.b")


@dataclass
class TrainConfig:
    batch_size: int = 64
    glances: int = 3
    lr0: float = 8e-4
    lr_decay: float = 0.97
    lr_step: int = 800
    lr_min: float = 1e-6
    momentum: float = 0.9
    beta: float = 0.4
    gamma: float = 1.0
    total_steps: int = 50_000
    seed: int = 0
    combiner: str = "concat2"
    core: str = "lstm"
    location: str = "learned"
    ce_mode: str = "final"
    eval_every: int = 500
    eval_batches: int = 100
    log_every: int = 10
    clip_norm: Optional[float] = None
    location_to_core: int = 1

    def __post_init__(self):
        positive = ("batch_size", "glances", "lr0", "lr_decay", "lr_step", "lr_min", "total_steps",
                    "eval_every", "eval_batches", "log_every")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.ce_mode not in ("final", "all"):
            raise ValueError("ce_mode must be 'final' or 'all'")
        if self.location_to_core not in (0, 1):
            raise ValueError("location_to_core must be 0 or 1")
        if self.location not in ("learned", "uniform"):
            raise ValueError("location must be 'learned' or 'uniform'")
        ModelConfig(combiner=self.combiner, core=self.core)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(combiner=self.combiner, core=self.core)

    @property
    def schedule(self) -> "LrSchedule":
        return LrSchedule(self.lr0, self.lr_decay, self.lr_step, self.lr_min)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class LrSchedule:
    lr0: float = 8e-4
    decay: float = 0.97
    step: int = 800
    lr_min: float = 1e-6


def lr_at(t: int, sched: LrSchedule = LrSchedule()) -> float:
    """``max(lr_min, lr0 * decay ** (t / step))`` with a real-valued exponent."""
    if t < 0:
        raise ValueError("step must be non-negative")
    return max(sched.lr_min, sched.lr0 * sched.decay ** (t / sched.step))


# ---------------------------------------------------------------------------
# REINFORCE pieces


def _check_sigma(sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be strictly positive")


def eligibility_mu(q, mu, sigma):
    """d log N(q; mu, sigma) / d mu."""
    _check_sigma(sigma)
    return (np.asarray(q) - mu) / np.square(sigma)


def eligibility_sigma(q, mu, sigma):
    """d log N(q; mu, sigma) / d sigma."""
    _check_sigma(sigma)
    d = np.asarray(q) - mu
    return (d * d - np.square(sigma)) / np.power(sigma, 3)


def returns(rewards: np.ndarray, glances: int, gamma: float = 1.0) -> np.ndarray:
    """Per-glance return ``R_s`` for a single terminal reward, shape (S, B)."""
    powers = gamma ** np.arange(glances - 1, -1, -1, dtype=np.float64)
    return powers[:, None] * rewards[None, :]


def advantages(batch: EpisodeBatch, gamma: float = 1.0) -> np.ndarray:
    return returns(batch.rewards, batch.glances, gamma) - batch.baseline


def _one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    y = np.zeros((labels.shape[0], n))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def hybrid_loss_value(batch: EpisodeBatch, beta: float, adv: np.ndarray,
                      ce_mode: str = "final") -> float:
    """Surrogate whose gradient is the hybrid update, with ``adv`` held constant."""
    B, S = batch.size, batch.glances
    idx = np.arange(B)
    steps = [S - 1] if ce_mode == "final" else range(S)
    # a probability that underflowed to 0 would make the value infinite while
    # the gradient (p - y) stays finite; saturate the reported value instead
    tiny = np.finfo(np.float64).tiny
    ce = -sum(np.log(np.maximum(batch.probs[s, idx, batch.objects], tiny)).sum() for s in steps) / B
    if beta == 0 or S < 2 or batch.location != "learned":
        return float(ce)
    q, mu, sigma = batch.q[1:], batch.mu[:-1], batch.sigma[:-1]
    log_density = -np.log(sigma) - (q - mu) ** 2 / (2 * sigma ** 2) - 0.5 * np.log(2 * np.pi)
    return float(ce - beta * np.sum(adv[:-1, :, None] * log_density) / B)


def hybrid_gradient(model: HapticAttentionModel, batch: EpisodeBatch, beta: float,
                    ce_mode: str = "final", adv: Optional[np.ndarray] = None,
                    gamma: float = 1.0, location_to_core: bool = True) -> Dict[str, np.ndarray]:
    """Batch-averaged gradient of the hybrid loss for all non-baseline blocks.

    The glance drawn from the policy after glance ``s`` is credited with
    advantage ``R_s - b_s``, which is treated as a constant.
    """
    B, S = batch.size, batch.glances
    y = _one_hot(batch.objects, model.config.n_classes)
    dlogits: List[Optional[np.ndarray]] = [None] * S
    if ce_mode == "final":
        dlogits[S - 1] = (batch.probs[S - 1] - y) / B
    else:
        for s in range(S):
            dlogits[s] = (batch.probs[s] - y) / B
    dmu: List[Optional[np.ndarray]] = [None] * S
    dsigma: List[Optional[np.ndarray]] = [None] * S
    if beta != 0 and batch.location == "learned":
        adv = advantages(batch, gamma) if adv is None else adv
        for s in range(S - 1):
            q, mu, sigma = batch.q[s + 1], batch.mu[s], batch.sigma[s]
            coeff = -beta * adv[s][:, None] / B
            dmu[s] = coeff * eligibility_mu(q, mu, sigma)
            dsigma[s] = coeff * eligibility_sigma(q, mu, sigma)
    grads = model.backward(batch.caches, dlogits, dmu, dsigma, location_to_core)
    for name in BASELINE_BLOCKS:
        grads.pop(name, None)
    return grads


def baseline_loss(batch: EpisodeBatch, gamma: float = 1.0, rewards: Optional[np.ndarray] = None):
    """Squared error of the baseline on every sub-sequence, averaged over the batch.

    Returns ``(loss, grads)`` where ``grads`` only holds the baseline head.
    """
    B = batch.size
    rewards = batch.rewards if rewards is None else rewards
    resid = returns(rewards, batch.glances, gamma) - batch.baseline      # (S, B)
    loss = float(np.sum(resid ** 2) / B)
    db = -2.0 * resid / B
    H = batch.core_out.shape[-1]
    dW = np.einsum("sb,sbh->h", db, batch.core_out).reshape(1, H)
    return loss, {"baseline.W": dW, "baseline.b": np.array([db.sum()])}


# ---------------------------------------------------------------------------
# training loop


def step_rngs(seed: int, step: int):
    """Independent task / policy streams for one training step."""
    return (np.random.default_rng([seed, 0, step, 0]),
            np.random.default_rng([seed, 0, step, 1]))


@dataclass
class Snapshot:
    step: int
    accuracy: float
    averaged_accuracy: float
    per_glance: List[float]


@dataclass
class TrainResult:
    model: HapticAttentionModel
    config: TrainConfig
    log: List[dict]
    snapshots: List[Snapshot] = field(default_factory=list)
    best_step: int = -1
    best_accuracy: float = float("nan")
    best_averaged_accuracy: float = float("nan")
    best_params: Optional[Dict[str, np.ndarray]] = None
    diverged_step: Optional[int] = None


# signs that training left the numerically meaningful regime
DIVERGENCE_ERRORS = (FloatingPointError, ResampleLimitError)


def write_log(path: Union[str, Path], rows: List[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else repr(row[k])) for k in LOG_COLUMNS})


def _train_step(t, config, env, model, opt, base_opt, sched, result) -> Optional[dict]:
    """One update plus, on schedule, an evaluation snapshot; returns the log row."""
    from .evaluation import evaluate

    params = model.params
    lr = lr_at(t, sched)
    opt.lr = lr
    base_opt.lr = lr
    task_rng, policy_rng = step_rngs(config.seed, t)
    batch = rollout_episodes(model, env, config.glances, task_rng, policy_rng,
                             config.batch_size, config.location)
    adv = advantages(batch, config.gamma)
    grads = hybrid_gradient(model, batch, config.beta, config.ce_mode, adv,
                            location_to_core=bool(config.location_to_core))
    loss = hybrid_loss_value(batch, config.beta, adv, config.ce_mode)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite hybrid loss at step {t}")
    b_loss, b_grads = baseline_loss(batch, config.gamma)
    opt.step(params, grads)
    base_opt.step(params, b_grads)

    done = t + 1
    row = None
    if done % config.log_every == 0 or done % config.eval_every == 0 or done == config.total_steps:
        row = {"step": done, "lr": lr, "beta": config.beta,
               "mean_reward": float(batch.rewards.mean()), "hybrid_loss": loss,
               "baseline_loss": b_loss, "snapshot_accuracy": None,
               "snapshot_averaged_accuracy": None}
    if done % config.eval_every == 0 or done == config.total_steps:
        ev = evaluate(model, env, config.glances, n_batches=config.eval_batches,
                      batch_size=config.batch_size, seed=config.seed, tag=done,
                      location=config.location)
        snap = Snapshot(done, ev.accuracy, ev.averaged_accuracy, list(ev.per_glance))
        result.snapshots.append(snap)
        row["snapshot_accuracy"] = ev.accuracy
        row["snapshot_averaged_accuracy"] = ev.averaged_accuracy
        if not ev.accuracy <= result.best_accuracy:
            result.best_accuracy = ev.accuracy
            result.best_step = done
            result.best_params = {k: v.copy() for k, v in params.items()}
        if not ev.averaged_accuracy <= result.best_averaged_accuracy:
            result.best_averaged_accuracy = ev.averaged_accuracy
    return row


def train(config: TrainConfig, env, model: Optional[HapticAttentionModel] = None,
          out_dir: Optional[Union[str, Path]] = None,
          progress: Optional[Callable[[dict], None]] = None,
          stop_on_divergence: bool = False) -> TrainResult:
    """Train for ``config.total_steps`` steps with periodic evaluation snapshots.

    Snapshots are taken every ``eval_every`` steps and after the last step;
    ``best_*`` fields hold the maximum over snapshots. With ``out_dir`` the
    log, final and best checkpoints are written there.

    A non-finite loss or gradient, or a policy whose draws keep leaving the
    pose range, raises. With ``stop_on_divergence`` training ends there
    instead, ``diverged_step`` records the step, and the snapshots so far
    are kept.
    """
    model = model or HapticAttentionModel(config.model_config, seed=config.seed)
    params = model.params
    main_blocks = {k: v for k, v in params.items() if k not in BASELINE_BLOCKS}
    base_blocks = {k: params[k] for k in BASELINE_BLOCKS}
    opt = nn.NesterovSGD(main_blocks, config.lr0, config.momentum, config.clip_norm)
    base_opt = nn.NesterovSGD(base_blocks, config.lr0, config.momentum)
    sched = config.schedule
    result = TrainResult(model, config, [])

    for t in range(config.total_steps):
        try:
            row = _train_step(t, config, env, model, opt, base_opt, sched, result)
        except DIVERGENCE_ERRORS:
            if not stop_on_divergence:
                raise
            result.diverged_step = t
            break
        if row is not None:
            result.log.append(row)
            if progress is not None:
                progress(row)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_log(out / "train_log.csv", result.log)
        info = (f"core = {config.core}\ncombiner = {config.combiner}\n"
                f"glances = {config.glances}\nseed = {config.seed}")
        last = config.total_steps if result.diverged_step is None else result.diverged_step
        save_checkpoint(out / "final.ckpt", params, info + f"\nstep = {last}")
        if result.best_params is not None:
            save_checkpoint(out / "best.ckpt", result.best_params, info + f"\nstep = {result.best_step}")
    return result
