"""Measurement protocol, ablation variants and heat-maps."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .model import HapticAttentionModel
from .rollout import rollout_episodes
from .touch import N_OBJECTS

VARIANTS = ("full", "rloc", "mlp", "mlp-averaged")
EVAL_CHUNK = 1600


def averaged_prediction(distributions) -> np.ndarray:
    """Argmax of the unweighted mean over glances (axis 0)."""
    d = np.asarray(distributions, dtype=np.float64)
    if d.shape[0] == 0:
        raise ValueError("need at least one distribution")
    return np.argmax(d.mean(axis=0), axis=-1)


@dataclass
class EvalResult:
    accuracy: float
    averaged_accuracy: float
    per_glance: np.ndarray
    n_episodes: int


def eval_rngs(seed: int, tag: int, chunk: int, purpose: int = 1):
    """Task / policy streams; training uses purpose 0, evaluation 1, heat-maps 2."""
    return (np.random.default_rng([seed, purpose, tag, chunk, 0]),
            np.random.default_rng([seed, purpose, tag, chunk, 1]))


def evaluate(model: HapticAttentionModel, env, glances: int, n_batches: int = 100,
             batch_size: int = 64, seed: int = 0, tag: int = 0,
             location: str = "learned") -> EvalResult:
    """Fresh episodes with the current policy: final, averaged and per-glance accuracy."""
    n = n_batches * batch_size
    correct_glance = np.zeros(glances)
    correct_avg = 0
    done = 0
    chunk = 0
    while done < n:
        b = min(EVAL_CHUNK, n - done)
        task_rng, policy_rng = eval_rngs(seed, tag, chunk)
        batch = rollout_episodes(model, env, glances, task_rng, policy_rng, b, location,
                                 keep_cache=False)
        correct_glance += (np.argmax(batch.probs, axis=-1) == batch.objects[None]).sum(axis=1)
        correct_avg += int((averaged_prediction(batch.probs) == batch.objects).sum())
        done += b
        chunk += 1
    per_glance = correct_glance / n
    return EvalResult(float(per_glance[-1]), correct_avg / n, per_glance, n)


def measure_accuracy(model, env, glances: int, n_batches: int = 100, **kw) -> float:
    return evaluate(model, env, glances, n_batches, **kw).accuracy


def per_glance_accuracy(model, env, glances: int = 10, n_batches: int = 100, **kw) -> np.ndarray:
    return evaluate(model, env, glances, n_batches, **kw).per_glance


# ---------------------------------------------------------------------------
# variants


def variant_config(variant: str, base=None):
    """Training config for a named variant layered over ``base``."""
    from .trainer import TrainConfig

    base = base or TrainConfig()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "full":
        if base.core != "lstm" or base.location != "learned":
            raise ValueError("variant 'full' needs the lstm core and the learned location policy")
        return base
    if variant == "rloc":
        if base.core != "lstm":
            raise ValueError("variant 'rloc' needs the lstm core")
        return base.replace(location="uniform", beta=0.0)
    if base.location != "learned":
        raise ValueError(f"variant {variant!r} needs the learned location policy")
    return base.replace(core="mlp")


@dataclass
class AccuracyReport:
    variant: str
    glances: int
    accuracies: List[float]
    seeds: List[int]
    config: dict = field(default_factory=dict)
    # per repeat: step at which training diverged and stopped, else None
    diverged: List[Optional[int]] = field(default_factory=list)

    @property
    def repeats(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def unscored(self) -> int:
        """Repeats that diverged before their first snapshot (accuracy NaN)."""
        return int(np.sum(np.isnan(self.accuracies)))

    @property
    def sem(self) -> float:
        if len(self.accuracies) < 2:
            return float("nan")
        return float(np.std(self.accuracies, ddof=1) / np.sqrt(len(self.accuracies)))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"variant": self.variant, "glances": self.glances, "repeats": self.repeats,
                "mean": self.mean, "sem": self.sem, "accuracies": self.accuracies,
                "seeds": self.seeds, "diverged": self.diverged, "config": self.config,
                "config_hash": self.config_hash}

    @classmethod
    def from_json(cls, d: dict) -> "AccuracyReport":
        return cls(d["variant"], d["glances"], list(d["accuracies"]), list(d["seeds"]),
                   d.get("config", {}), list(d.get("diverged", [])))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def _train_repeat(args):
    from .envs import make_env
    from .trainer import train

    cfg, env_kind, dataset_path = args
    res = train(cfg, make_env(env_kind, dataset_path), stop_on_divergence=True)
    return res.best_accuracy, res.best_averaged_accuracy, res.diverged_step


def train_repeats(config, seeds: Sequence[int], env_kind: str = "dataset", dataset_path=None,
                  workers: int = 1):
    """``(best, best_averaged, diverged_step)`` per seed.

    A repeat that diverges keeps its best snapshot from before the
    divergence. Repeats only differ by seed, so running them in worker
    processes does not change the result.
    """
    jobs = [(config.replace(seed=s), env_kind, dataset_path) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_train_repeat, jobs))
    return [_train_repeat(j) for j in jobs]


def _report(variant: str, cfg, seeds, results) -> AccuracyReport:
    pick = 1 if variant == "mlp-averaged" else 0
    cfg_dict = asdict(cfg)
    cfg_dict.pop("seed")
    return AccuracyReport(variant, cfg.glances, [r[pick] for r in results], list(seeds), cfg_dict,
                          [r[2] for r in results])


def run_variant(variant: str, config=None, repeats: int = 10, seeds: Optional[Sequence[int]] = None,
                env_kind: str = "dataset", dataset_path=None, workers: int = 1) -> AccuracyReport:
    """Train independent repeats and collect each one's best snapshot accuracy.

    ``mlp-averaged`` trains the mlp variant and scores it by the averaged
    prediction.
    """
    return run_variants([variant], config, repeats, seeds, env_kind, dataset_path, workers)[0]


def run_variants(variants: Sequence[str], config=None, repeats: int = 10,
                 seeds: Optional[Sequence[int]] = None, env_kind: str = "dataset",
                 dataset_path=None, workers: int = 1) -> List[AccuracyReport]:
    """Like :func:`run_variant` for several variants; ``mlp`` and
    ``mlp-averaged`` are read off the same training runs."""
    from .trainer import TrainConfig

    config = config or TrainConfig()
    seeds = list(seeds) if seeds is not None else [config.seed + k for k in range(repeats)]
    done: Dict[str, list] = {}
    reports = []
    for v in variants:
        cfg = variant_config(v, config)
        key = json.dumps(asdict(cfg), sort_keys=True)
        if key not in done:
            done[key] = train_repeats(cfg, seeds, env_kind, dataset_path, workers)
        reports.append(_report(v, cfg, seeds, done[key]))
    return reports


def write_table(path: Union[str, Path], reports: Sequence[AccuracyReport]) -> None:
    """Glance-count rows by variant columns, ``mean +- sem`` cells plus raw columns."""
    variants = [v for v in VARIANTS if any(r.variant == v for r in reports)]
    glances = sorted({r.glances for r in reports})
    cell = {(r.variant, r.glances): r for r in reports
            if r.config.get("combiner", "concat2") == "concat2"}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["glances"] + [f"{v}_{k}" for v in variants for k in ("mean", "sem", "repeats")])
        for g in glances:
            row = [g]
            for v in variants:
                r = cell.get((v, g))
                row += ["", "", ""] if r is None else [f"{r.mean:.4f}", f"{r.sem:.4f}", r.repeats]
            w.writerow(row)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _lookup(reports: Sequence[AccuracyReport]):
    return {(r.variant, r.glances, r.config.get("combiner", "concat2")): r for r in reports}


def _unscored_note(*reports: AccuracyReport) -> str:
    notes = []
    for r in reports:
        if r.unscored:
            rest = np.nanmean(r.accuracies) if r.unscored < r.repeats else float("nan")
            notes.append(f"{r.variant} S={r.glances}: {r.unscored} of {r.repeats} repeats "
                         f"diverged before a snapshot, mean of the rest {rest:.4f}")
    return f" [{'; '.join(notes)}]" if notes else ""


def ablation_checks(reports: Sequence[AccuracyReport]) -> List[Check]:
    """Ordering thresholds over whichever report pairs are present.

    A repeat without any snapshot has accuracy NaN, so its report's mean is
    NaN and every check using it fails.
    """
    cell = _lookup(reports)
    out = []

    def get(v, s, c="concat2"):
        return cell.get((v, s, c))

    full2, rloc2 = get("full", 2), get("rloc", 2)
    if full2 and rloc2:
        gap = full2.mean - rloc2.mean
        out.append(Check("location advantage at S=2", gap >= 0.03,
                         f"full {full2.mean:.4f} - rloc {rloc2.mean:.4f} = {gap:+.4f} (need >= 0.03)"
                         + _unscored_note(full2, rloc2)))
    full10, rloc10 = get("full", 10), get("rloc", 10)
    if full10 and rloc10:
        gap = abs(full10.mean - rloc10.mean)
        out.append(Check("location parity at S=10", gap <= 0.02,
                         f"|full {full10.mean:.4f} - rloc {rloc10.mean:.4f}| = {gap:.4f} (need <= 0.02)"
                         + _unscored_note(full10, rloc10)))
    mlp2, mlp6 = get("mlp", 2), get("mlp", 6)
    if mlp2 and mlp6:
        gain = mlp6.mean - mlp2.mean
        out.append(Check("memoryless plateau", gain < 0.05,
                         f"mlp S=6 {mlp6.mean:.4f} - S=2 {mlp2.mean:.4f} = {gain:+.4f} (need < 0.05)"
                         + _unscored_note(mlp2, mlp6)))
    avg6 = get("mlp-averaged", 6)
    if avg6:
        out.append(Check("averaged memoryless at S=6", avg6.mean >= 0.90,
                         f"{avg6.mean:.4f} (need >= 0.90)" + _unscored_note(avg6)))
    c2 = get("full", 3, "concat2")
    if c2:
        for other, rule in (("concat1", "ge"), ("multiply", "ge"), ("add", "near")):
            r = get("full", 3, other)
            if r is None:
                continue
            if rule == "ge":
                ok = c2.mean >= r.mean
                detail = f"concat2 {c2.mean:.4f} vs {other} {r.mean:.4f} (need concat2 >= {other})"
            else:
                ok = abs(c2.mean - r.mean) <= 0.015
                detail = f"|concat2 {c2.mean:.4f} - add {r.mean:.4f}| (need <= 0.015)"
            out.append(Check(f"combiner concat2 vs {other}", ok, detail + _unscored_note(c2, r)))
    return out


# ---------------------------------------------------------------------------
# heat-maps


@dataclass
class HeatmapGrid:
    """Visit counts of the last glance, indexed ``[x_bin, phi_bin]``."""

    object_id: int
    counts: np.ndarray
    mean_counts: np.ndarray     # same binning applied to the policy means

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def normalization_max(self) -> int:
        return int(self.counts.max())

    @property
    def ranked(self) -> np.ndarray:
        m = self.counts.max()
        return self.counts / m if m > 0 else self.counts.astype(np.float64)

    def modal_bin(self):
        i, j = np.unravel_index(np.argmax(self.counts), self.counts.shape)
        return int(i), int(j)

    def modal_phi_bin(self) -> int:
        return int(np.argmax(self.counts.sum(axis=0)))

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_x", "bin_phi", "count", "mean_count"])
            bins_x, bins_phi = self.counts.shape
            for i in range(bins_x):
                for j in range(bins_phi):
                    w.writerow([i, j, int(self.counts[i, j]), int(self.mean_counts[i, j])])

    def write_svg(self, path: Union[str, Path], cell: int = 18) -> None:
        Path(path).write_text(heatmap_svg(self.ranked, f"object {self.object_id}", cell))


def pose_bins(poses: np.ndarray, bins: int = 20):
    """Floor-mapped bin indices over [-1, 1] x [-pi/2, pi/2]; upper edge lands in the last bin."""
    poses = np.asarray(poses, dtype=np.float64)
    fx = (poses[..., 0] + 1.0) / 2.0
    fphi = (poses[..., 1] + np.pi / 2) / np.pi
    i = np.clip(np.floor(fx * bins), 0, bins - 1).astype(np.int64)
    j = np.clip(np.floor(fphi * bins), 0, bins - 1).astype(np.int64)
    return i, j


def phi_bin_range(j: int, bins: int = 20):
    lo = -np.pi / 2 + j * np.pi / bins
    return lo, lo + np.pi / bins


def build_heatmaps(model: HapticAttentionModel, env, glances: int, bins: int = 20,
                   batches: int = 1000, batch_size: int = 64, seed: int = 0,
                   location: str = "learned") -> Dict[int, HeatmapGrid]:
    """Heat-maps for every object from one set of ``batches * batch_size`` episodes."""
    counts = np.zeros((N_OBJECTS, bins, bins), dtype=np.int64)
    mean_counts = np.zeros_like(counts)
    n = batches * batch_size
    done, chunk = 0, 0
    while done < n:
        b = min(EVAL_CHUNK, n - done)
        task_rng, policy_rng = eval_rngs(seed, 0, chunk, purpose=2)
        batch = rollout_episodes(model, env, glances, task_rng, policy_rng, b, location,
                                 keep_cache=False)
        i, j = pose_bins(batch.poses[-1], bins)
        np.add.at(counts, (batch.objects, i, j), 1)
        # means that produced the last glance; for one glance there is no policy step
        src = batch.mu[-2] if glances > 1 else batch.q[-1]
        mean_pose = src.copy()
        mean_pose[:, 1] *= np.pi / 2
        mi, mj = pose_bins(mean_pose, bins)
        np.add.at(mean_counts, (batch.objects, mi, mj), 1)
        done += b
        chunk += 1
    return {o: HeatmapGrid(o, counts[o], mean_counts[o]) for o in range(N_OBJECTS)}


def build_heatmap(model, env, obj: int, glances: int = 10, bins: int = 20, batches: int = 1000,
                  **kw) -> HeatmapGrid:
    return build_heatmaps(model, env, glances, bins, batches, **kw)[obj]


def heatmap_svg(values: np.ndarray, title: str = "", cell: int = 18) -> str:
    """Grayscale-to-red SVG with x bins across and phi bins upward."""
    bins_x, bins_phi = values.shape
    pad = 30
    w, h = bins_x * cell + 2 * pad, bins_phi * cell + 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{pad}" y="{pad - 10}" font-family="sans-serif" font-size="12">{title}</text>']
    for i in range(bins_x):
        for j in range(bins_phi):
            v = float(np.clip(values[i, j], 0.0, 1.0))
            r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
            x = pad + i * cell
            y = pad + (bins_phi - 1 - j) * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="rgb({r},{g},{b})"><title>x_bin {i}, phi_bin {j}: {v:.3f}</title></rect>')
    parts.append(f'<text x="{pad}" y="{h - 8}" font-family="sans-serif" font-size="11">'
                 f'x: -1 .. 1 (left to right), phi: -pi/2 .. pi/2 (bottom to top)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
