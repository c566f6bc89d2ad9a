import json

import numpy as np
import pytest

from hamlab.evaluation import (AccuracyReport, HeatmapGrid, ablation_checks, averaged_prediction,
                               build_heatmaps, evaluate, measure_accuracy, per_glance_accuracy,
                               phi_bin_range, pose_bins, run_variants, variant_config, write_table)
from hamlab.model import HapticAttentionModel, LocationPolicy, ModelConfig, StepOutput
from hamlab.trainer import TrainConfig


class LabelEnv:
    """Pressure vector that carries the object id in its first four entries."""

    def glance(self, objects, poses):
        p = np.zeros((len(objects), 256))
        p[np.arange(len(objects)), objects] = 1.0
        return p


class PassThroughModel:
    config = ModelConfig()

    def initial_state(self, batch):
        return None

    def step(self, pressure, pose, state):
        B = pressure.shape[0]
        pol = LocationPolicy(np.zeros((B, 2)), np.full((B, 2), 0.5))
        return StepOutput(state, np.zeros((B, 256)), pressure[:, :4], pressure[:, :4], pol,
                          np.zeros(B), {})


# --- averaging --------------------------------------------------------------------

def test_averaged_prediction_examples():
    d = np.array([[[0.6, 0.4, 0.0, 0.0]], [[0.1, 0.9, 0.0, 0.0]]])
    assert averaged_prediction(d)[0] == 1
    one = np.array([[[0.1, 0.2, 0.6, 0.1]]])
    assert averaged_prediction(one)[0] == 2
    same = np.repeat(one, 5, axis=0)
    assert averaged_prediction(same)[0] == 2
    with pytest.raises(ValueError):
        averaged_prediction(np.zeros((0, 1, 4)))


# --- measurement --------------------------------------------------------------------

def test_oracle_classifier_scores_one():
    assert measure_accuracy(PassThroughModel(), LabelEnv(), 3, n_batches=10) == 1.0


def test_fresh_model_is_at_chance(dataset_env):
    acc = per_glance_accuracy(HapticAttentionModel(seed=11), dataset_env, glances=3, n_batches=30)
    assert np.all(np.abs(acc - 0.25) < 0.04)


def test_last_glance_equals_measured_accuracy(dataset_env):
    m = HapticAttentionModel(seed=2)
    ev = evaluate(m, dataset_env, 3, n_batches=5, seed=4)
    assert ev.per_glance[-1] == ev.accuracy == measure_accuracy(m, dataset_env, 3, 5, seed=4)
    assert ev.n_episodes == 320


def test_evaluation_is_chunk_exact(dataset_env):
    m = HapticAttentionModel(seed=2)
    a = evaluate(m, dataset_env, 2, n_batches=30, seed=1)
    b = evaluate(m, dataset_env, 2, n_batches=30, seed=1)
    assert a.accuracy == b.accuracy and np.array_equal(a.per_glance, b.per_glance)


# --- variants ---------------------------------------------------------------------

def test_variant_configs():
    base = TrainConfig(glances=4)
    assert variant_config("full", base) == base
    r = variant_config("rloc", base)
    assert (r.location, r.beta, r.core) == ("uniform", 0.0, "lstm")
    assert variant_config("mlp", base).core == "mlp"
    assert variant_config("mlp-averaged", base).core == "mlp"


def test_variant_conflicts_rejected():
    with pytest.raises(ValueError):
        variant_config("full", TrainConfig(core="mlp"))
    with pytest.raises(ValueError):
        variant_config("rloc", TrainConfig(core="mlp"))
    with pytest.raises(ValueError):
        variant_config("mlp-averaged", TrainConfig(location="uniform", beta=0.0))
    with pytest.raises(ValueError):
        variant_config("lstm-averaged")


def test_run_variants_shares_mlp_runs():
    cfg = TrainConfig(glances=2, total_steps=4, eval_every=2, eval_batches=1)
    plain, averaged = run_variants(["mlp", "mlp-averaged"], cfg, repeats=2)
    assert plain.seeds == averaged.seeds == [0, 1]
    assert plain.config == averaged.config
    assert all(0 <= a <= 1 for a in plain.accuracies + averaged.accuracies)


# --- reports ----------------------------------------------------------------------

def report(variant, glances, accs, combiner="concat2"):
    return AccuracyReport(variant, glances, accs, list(range(len(accs))), {"combiner": combiner})


def test_report_statistics_and_round_trip(tmp_path):
    r = report("full", 2, [0.8, 0.9, 0.85, 0.95])
    assert r.mean == pytest.approx(0.875)
    assert r.sem == pytest.approx(np.std([0.8, 0.9, 0.85, 0.95], ddof=1) / 2)
    r.save(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert {"variant", "glances", "repeats", "mean", "sem", "config_hash"} <= set(doc)
    back = AccuracyReport.from_json(doc)
    assert back.accuracies == r.accuracies and back.config_hash == r.config_hash


def test_table_layout(tmp_path):
    reps = [report("full", 1, [0.5, 0.6]), report("rloc", 1, [0.5, 0.5]), report("full", 2, [0.8, 0.8])]
    write_table(tmp_path / "t.csv", reps)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "glances,full_mean,full_sem,full_repeats,rloc_mean,rloc_sem,rloc_repeats"
    assert lines[2].startswith("2,0.8000,0.0000,2,,,")


def test_ablation_checks():
    reps = [report("full", 2, [0.83]), report("rloc", 2, [0.75]),
            report("full", 10, [0.99]), report("rloc", 10, [0.995]),
            report("mlp", 2, [0.66]), report("mlp", 6, [0.67]), report("mlp-averaged", 6, [0.97]),
            report("full", 3, [0.905]), report("full", 3, [0.899], "concat1"),
            report("full", 3, [0.873], "multiply"), report("full", 3, [0.902], "add")]
    checks = ablation_checks(reps)
    assert len(checks) == 7 and all(c.passed for c in checks)
    worse = ablation_checks([report("full", 2, [0.76]), report("rloc", 2, [0.75])])
    assert not worse[0].passed and worse[0].line().startswith("[FAIL]")


# --- heat-maps --------------------------------------------------------------------

def test_pose_bin_boundaries():
    i, j = pose_bins(np.array([[1.0, np.pi / 2], [-1.0, -np.pi / 2], [0.0, 0.0], [-0.85, 0.0]]))
    assert list(i) == [19, 0, 10, 1] and list(j) == [19, 0, 10, 10]
    lo, hi = phi_bin_range(12)
    assert lo == pytest.approx(np.pi / 2 * 0.2) and hi == pytest.approx(np.pi / 2 * 0.3)


def test_heatmap_conservation_and_reproducibility(dataset_env, tmp_path):
    m = HapticAttentionModel(seed=0)
    a = build_heatmaps(m, dataset_env, 3, batches=20)
    b = build_heatmaps(m, dataset_env, 3, batches=20)
    assert sum(g.total for g in a.values()) == 20 * 64
    assert all(int(g.mean_counts.sum()) == g.total for g in a.values())
    assert all(np.array_equal(a[o].counts, b[o].counts) for o in a)
    g = a[0]
    g.write_csv(tmp_path / "h.csv")
    g.write_svg(tmp_path / "h.svg")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0].startswith("bin_x,bin_phi,count") and len(rows) == 401
    assert (tmp_path / "h.svg").read_text().startswith("<svg")
    assert g.ranked.max() == 1.0


def test_modal_bins():
    c = np.zeros((20, 20), dtype=int)
    c[3, 14] = 5
    c[7, 2] = 4
    c[8, 2] = 4
    g = HeatmapGrid(0, c, c)
    assert g.modal_bin() == (3, 14)
    assert g.modal_phi_bin() == 2


def test_report_keeps_divergence_steps(tmp_path):
    r = AccuracyReport("mlp", 2, [0.5, 0.7], [0, 1], {"combiner": "concat2"}, [None, 3120])
    r.save(tmp_path / "r.json")
    back = AccuracyReport.from_json(json.loads((tmp_path / "r.json").read_text()))
    assert back.diverged == [None, 3120] and back.mean == pytest.approx(0.6)


def test_repeat_without_snapshot_fails_its_checks():
    nan = float("nan")
    cfg = {"combiner": "concat2"}
    mlp2 = AccuracyReport("mlp", 2, [0.5, 0.6], [0, 1], cfg)
    mlp6 = AccuracyReport("mlp", 6, [0.5, nan], [0, 1], cfg, [None, 200])
    avg6 = AccuracyReport("mlp-averaged", 6, [0.95, nan], [0, 1], cfg, [None, 200])
    checks = {c.name: c for c in ablation_checks([mlp2, mlp6, avg6])}
    assert mlp6.unscored == 1 and mlp2.unscored == 0
    assert not checks["memoryless plateau"].passed
    assert not checks["averaged memoryless at S=6"].passed
    assert "1 of 2 repeats diverged before a snapshot, mean of the rest 0.9500" in \
        checks["averaged memoryless at S=6"].detail
