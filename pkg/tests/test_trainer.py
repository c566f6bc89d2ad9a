import dataclasses
import math

import numpy as np
import pytest

from hamlab import nn
from hamlab.model import HapticAttentionModel, ModelConfig
from hamlab.rollout import rollout_episodes
from hamlab.trainer import (BASELINE_BLOCKS, LrSchedule, TrainConfig, advantages, baseline_loss,
                            eligibility_mu, eligibility_sigma, hybrid_gradient, lr_at, returns,
                            train)


def log_normal(q, mu, sigma):
    return -math.log(sigma) - (q - mu) ** 2 / (2 * sigma ** 2) - 0.5 * math.log(2 * math.pi)


# --- config and schedule ----------------------------------------------------

def test_defaults_are_the_published_hyperparameters():
    c = TrainConfig()
    assert (c.batch_size, c.lr0, c.lr_decay, c.lr_step, c.lr_min, c.momentum, c.beta) == \
        (64, 8e-4, 0.97, 800, 1e-6, 0.9, 0.4)
    assert (c.gamma, c.total_steps, c.combiner, c.core, c.clip_norm) == \
        (1.0, 50_000, "concat2", "lstm", None)


@pytest.mark.parametrize("bad", [dict(beta=1.5), dict(batch_size=0), dict(momentum=1.0),
                                 dict(lr0=-1.0), dict(ce_mode="mean"), dict(location="grid"),
                                 dict(core="rnn"), dict(gamma=0.0)])
def test_invalid_config_rejected(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_schedule_examples():
    assert lr_at(0) == 8e-4
    assert abs(lr_at(800) - 7.76e-4) < 1e-15
    assert lr_at(10 ** 7) == 1e-6
    assert abs(lr_at(400) - 8e-4 * 0.97 ** 0.5) < 1e-18
    with pytest.raises(ValueError):
        lr_at(-1)


def test_schedule_is_non_increasing_and_floored():
    lrs = np.array([lr_at(t) for t in range(0, 400_000, 997)])
    assert np.all(np.diff(lrs) <= 0)
    assert lrs.min() == 1e-6
    assert lr_at(5, LrSchedule(1e-3, 0.5, 1, 1e-4)) == 1e-4


# --- eligibilities --------------------------------------------------------------

def test_eligibility_examples():
    assert eligibility_mu(0.3, 0.3, 0.7) == 0.0
    assert eligibility_sigma(0.3 + 0.7, 0.3, 0.7) == pytest.approx(0.0, abs=1e-15)
    assert eligibility_mu(1.0, 0.0, 1.0) == 1.0
    assert eligibility_sigma(1.0, 0.0, 1.0) == 0.0
    assert eligibility_sigma(2.0, 0.0, 1.0) == 3.0


def test_eligibility_rejects_non_positive_sigma():
    with pytest.raises(ValueError):
        eligibility_mu(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        eligibility_sigma(0.0, 0.0, np.array([1.0, -1.0]))


@pytest.mark.parametrize("q,mu,sigma", [(0.2, -0.1, 0.3), (-0.9, 0.5, 1.2), (0.0, 0.0, 0.05)])
def test_eligibility_is_the_log_density_derivative(q, mu, sigma):
    h = 1e-6
    d_mu = (log_normal(q, mu + h, sigma) - log_normal(q, mu - h, sigma)) / (2 * h)
    d_sigma = (log_normal(q, mu, sigma + h) - log_normal(q, mu, sigma - h)) / (2 * h)
    assert eligibility_mu(q, mu, sigma) == pytest.approx(d_mu, rel=1e-7, abs=1e-9)
    assert eligibility_sigma(q, mu, sigma) == pytest.approx(d_sigma, rel=1e-7, abs=1e-9)


def test_eligibility_ignores_truncation():
    """Resampling into [-1, 1] adds a normalizer term that the update leaves out."""
    from math import erf, sqrt

    def log_trunc(q, mu, sigma):
        mass = 0.5 * (erf((1 - mu) / (sigma * sqrt(2))) - erf((-1 - mu) / (sigma * sqrt(2))))
        return log_normal(q, mu, sigma) - math.log(mass)

    q, mu, sigma, h = 0.5, 0.8, 0.6, 1e-6
    d_trunc = (log_trunc(q, mu + h, sigma) - log_trunc(q, mu - h, sigma)) / (2 * h)
    assert abs(d_trunc - eligibility_mu(q, mu, sigma)) > 0.1


def test_reinforce_estimates_bandit_gradient():
    """1-D Gaussian bandit, reward 1 iff q > 0: E[r] = Phi(mu / sigma)."""
    rng = np.random.default_rng(0)
    mu, sigma, n = 0.3, 0.8, 400_000
    q = rng.normal(mu, sigma, n)
    r = (q > 0).astype(float)
    b = 0.5
    samples = (r - b) * eligibility_mu(q, mu, sigma)
    estimate, se = samples.mean(), samples.std(ddof=1) / math.sqrt(n)
    # enumerate the two outcomes: only the boundary density moves E[r]
    exact = math.exp(-0.5 * (mu / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    assert abs(estimate - exact) < 4 * se
    s_samples = (r - b) * eligibility_sigma(q, mu, sigma)
    exact_sigma = -mu / sigma * exact
    assert abs(s_samples.mean() - exact_sigma) < 4 * s_samples.std(ddof=1) / math.sqrt(n)


# --- rollouts ---------------------------------------------------------------------

def test_single_glance_uses_no_policy_sample(dataset_env):
    m = HapticAttentionModel(seed=0)
    policy = np.random.default_rng(99)
    before = policy.bit_generator.state
    b = rollout_episodes(m, dataset_env, 1, np.random.default_rng(1), policy, 16)
    assert policy.bit_generator.state == before
    assert b.q.shape == (1, 16, 2)


def test_trace_lengths(dataset_env):
    m = HapticAttentionModel(seed=0)
    b = rollout_episodes(m, dataset_env, 4, np.random.default_rng(1), batch_size=8)
    assert b.glances == 4 and len(b.caches) == 4
    t = b.episode(3)
    assert t.poses.shape == (4, 2) and t.hidden.shape == (4, 256) and t.first_random
    assert np.all(np.abs(b.poses[..., 1]) <= np.pi / 2) and np.all(np.abs(b.q) <= 1)
    assert np.allclose(b.poses[..., 1], b.q[..., 1] * np.pi / 2)


def test_variants_share_first_glances(dataset_env):
    m = HapticAttentionModel(seed=0)
    kw = dict(batch_size=32)
    a = rollout_episodes(m, dataset_env, 3, np.random.default_rng([5, 0]), np.random.default_rng([5, 1]), **kw)
    b = rollout_episodes(m, dataset_env, 3, np.random.default_rng([5, 0]), np.random.default_rng([5, 1]),
                         location="uniform", **kw)
    assert np.array_equal(a.objects, b.objects)
    assert np.array_equal(a.q[0], b.q[0])
    assert not np.array_equal(a.q[1], b.q[1])


def test_untrained_accuracy_is_chance(dataset_env):
    m = HapticAttentionModel(seed=3)
    b = rollout_episodes(m, dataset_env, 2, np.random.default_rng(0), batch_size=3200, keep_cache=False)
    assert abs(b.rewards.mean() - 0.25) < 0.03


# --- hybrid gradient ----------------------------------------------------------------

@pytest.fixture(scope="module")
def batch_and_model(dataset_env):
    m = HapticAttentionModel(seed=0)
    for v in m.params.values():
        v += 0.05 * np.random.default_rng(1).standard_normal(v.shape)
    b = rollout_episodes(m, dataset_env, 3, np.random.default_rng(2), batch_size=16)
    return m, b


LOCATION_BLOCKS = ("loc.mu_hidden.W", "loc.mu_hidden.b", "loc.mu_out.W", "loc.mu_out.b",
                   "loc.sigma_hidden.W", "loc.sigma_hidden.b", "loc.sigma_out.W", "loc.sigma_out.b")


def test_beta_zero_gives_no_location_gradient(batch_and_model):
    m, b = batch_and_model
    g = hybrid_gradient(m, b, beta=0.0)
    for name in LOCATION_BLOCKS:
        assert np.all(g[name] == 0), name
    ce_only = hybrid_gradient(m, b, beta=0.4, adv=np.zeros((3, 16)))
    for name in g:
        assert np.array_equal(g[name], ce_only[name]), name


def test_zero_advantage_removes_reinforce_term(batch_and_model):
    m, b = batch_and_model
    with_zero = hybrid_gradient(m, b, 0.4, adv=np.zeros((3, 16)))
    pure_ce = hybrid_gradient(m, b, 0.0)
    assert all(np.array_equal(with_zero[k], pure_ce[k]) for k in pure_ce)


def test_hybrid_gradient_excludes_baseline(batch_and_model):
    m, b = batch_and_model
    g = hybrid_gradient(m, b, 0.4)
    assert not set(BASELINE_BLOCKS) & set(g)


def test_single_episode_head_gradient_by_hand(dataset_env):
    m = HapticAttentionModel(seed=4)
    b = rollout_episodes(m, dataset_env, 2, np.random.default_rng(8), batch_size=1)
    beta, adv = 0.4, np.array([[0.7], [0.0]])
    g = hybrid_gradient(m, b, beta, adv=adv)
    q, mu, sigma = b.q[1, 0], b.mu[0, 0], b.sigma[0, 0]
    z_sigma = np.log(np.expm1(sigma))                  # softplus inverse
    zeta_mu = (q - mu) / sigma ** 2
    zeta_sigma = ((q - mu) ** 2 - sigma ** 2) / sigma ** 3
    expect_mu = -beta * 0.7 * zeta_mu * (1 - mu ** 2)
    expect_sigma = -beta * 0.7 * zeta_sigma / (1 + np.exp(-z_sigma))
    assert np.allclose(g["loc.mu_out.b"], expect_mu, rtol=1e-10)
    assert np.allclose(g["loc.sigma_out.b"], expect_sigma, rtol=1e-8)


def test_location_gradient_can_stop_at_heads(batch_and_model):
    m, b = batch_and_model
    full = hybrid_gradient(m, b, 0.4)
    stopped = hybrid_gradient(m, b, 0.4, location_to_core=False)
    ce = hybrid_gradient(m, b, 0.0)
    for name in full:
        if name.startswith("loc."):
            assert np.array_equal(full[name], stopped[name])
        else:
            assert np.allclose(stopped[name], ce[name], rtol=0, atol=1e-17)


# --- baseline -----------------------------------------------------------------------

def test_baseline_loss_examples(batch_and_model):
    m, b = batch_and_model
    perfect = dataclasses.replace(b, baseline=returns(b.rewards, 3))
    assert baseline_loss(perfect)[0] == 0.0
    zero = dataclasses.replace(b, baseline=np.zeros((3, 16)))
    loss, _ = baseline_loss(zero, rewards=np.ones(16))
    assert loss == pytest.approx(3.0, abs=1e-15)


def test_baseline_gradient_matches_finite_differences():
    from hamlab.gradcheck import baseline_check

    assert baseline_check(seed=3) < 1e-6


def test_baseline_step_only_moves_baseline_head(batch_and_model):
    m, b = batch_and_model
    params = {k: v.copy() for k, v in m.params.items()}
    before = {k: v.copy() for k, v in params.items()}
    _, grads = baseline_loss(b)
    assert set(grads) == set(BASELINE_BLOCKS)
    opt = nn.NesterovSGD({k: params[k] for k in BASELINE_BLOCKS}, 0.1)
    opt.step(params, grads)
    for k in params:
        if k in BASELINE_BLOCKS:
            assert not np.array_equal(params[k], before[k])
        else:
            assert np.array_equal(params[k], before[k]), k


def test_discounted_returns():
    r = np.array([1.0, 0.0])
    assert np.allclose(returns(r, 3, 0.5), [[0.25, 0.0], [0.5, 0.0], [1.0, 0.0]])


# --- training loop -----------------------------------------------------------------

def small_config(**kw):
    base = dict(glances=2, total_steps=30, eval_every=15, eval_batches=2, log_every=5, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(dataset_env, tmp_path):
    train(small_config(), dataset_env, out_dir=tmp_path / "a")
    train(small_config(), dataset_env, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "train_log.csv").read_bytes()
    assert a == (tmp_path / "b" / "train_log.csv").read_bytes()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_training_log_contents(dataset_env, tmp_path):
    res = train(small_config(), dataset_env, out_dir=tmp_path)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == ("step,lr,beta,mean_reward,hybrid_loss,baseline_loss,"
                        "snapshot_accuracy,snapshot_averaged_accuracy")
    assert len(lines) == 1 + 6
    assert all(row["beta"] == 0.4 for row in res.log)
    assert [s.step for s in res.snapshots] == [15, 30]
    assert res.best_accuracy == max(s.accuracy for s in res.snapshots)
    assert (tmp_path / "best.ckpt").exists()


def test_training_changes_parameters(dataset_env):
    m = HapticAttentionModel(seed=7)
    before = {k: v.copy() for k, v in m.params.items()}
    train(small_config(total_steps=5, eval_every=5), dataset_env, model=m)
    assert all(not np.array_equal(before[k], m.params[k]) for k in m.params)


def test_random_location_training_leaves_location_heads(dataset_env):
    m = HapticAttentionModel(seed=7)
    before = {k: v.copy() for k, v in m.params.items()}
    train(small_config(total_steps=5, eval_every=5, location="uniform", beta=0.0), dataset_env, model=m)
    for k in LOCATION_BLOCKS:
        assert np.array_equal(before[k], m.params[k]), k


def test_sim_and_dataset_envs_are_interchangeable(dataset_env):
    from hamlab.envs import SimEnv

    m = HapticAttentionModel(seed=0)
    sim = rollout_episodes(m, SimEnv(), 2, np.random.default_rng(4), batch_size=8)
    rec = rollout_episodes(m, dataset_env, 2, np.random.default_rng(4), batch_size=8)
    assert sim.probs.shape == rec.probs.shape
    assert np.array_equal(sim.q[0], rec.q[0])


class FailingEnv:
    """Delegates to a real env, then reports a numerical failure."""

    def __init__(self, env, calls_before_failure):
        self.env, self.left = env, calls_before_failure

    def glance(self, objects, poses):
        self.left -= 1
        if self.left < 0:
            raise FloatingPointError("simulated blow-up")
        return self.env.glance(objects, poses)


def test_divergence_raises_by_default(dataset_env):
    cfg = TrainConfig(glances=2, total_steps=10, eval_every=2, eval_batches=1)
    with pytest.raises(FloatingPointError):
        train(cfg, FailingEnv(dataset_env, 15))


def test_divergence_stops_and_keeps_best_snapshot(dataset_env, tmp_path):
    cfg = TrainConfig(glances=2, total_steps=10, eval_every=2, eval_batches=1)
    # per step: 2 training glances; per snapshot: 2 evaluation glances
    res = train(cfg, FailingEnv(dataset_env, 15), out_dir=tmp_path, stop_on_divergence=True)
    assert res.diverged_step is not None and res.diverged_step < 10
    assert [s.step for s in res.snapshots] == list(range(2, res.diverged_step + 1, 2))
    assert res.best_accuracy == max(s.accuracy for s in res.snapshots)
    assert (tmp_path / "best.ckpt").exists()
    assert f"step = {res.diverged_step}" in (tmp_path / "final.ckpt.manifest.txt").read_text()


def test_runaway_sigma_is_a_divergence(dataset_env):
    model = HapticAttentionModel(seed=0)
    model.params["loc.sigma_out.b"][:] = 1e6
    cfg = TrainConfig(glances=2, total_steps=5)
    res = train(cfg, dataset_env, model=model, stop_on_divergence=True)
    assert res.diverged_step == 0 and res.snapshots == [] and math.isnan(res.best_accuracy)
