"""Command-line entry point.

Subcommands: record-dataset, train, eval, ablate, heatmap, gradcheck, report.
Training options come from a flat ``key = value`` file (``--config``) and
are overridden by flags; unset keys keep the built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, manifest_path, save_checkpoint
from .envs import DatasetEnv, make_env
from .model import HapticAttentionModel, ModelConfig
from .trainer import TrainConfig, train

# config-file keys outside TrainConfig
RUN_KEYS = {"env": str, "dataset": str, "workers": int}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


class UsageError(Exception):
    """Bad configuration; reported like a bad flag (exit 2)."""


# ---------------------------------------------------------------------------
# config


def _coerce(key: str, raw: str):
    kind = RUN_KEYS.get(key) or _FIELD_TYPES[key]
    kind = str(kind)
    try:
        if "Optional" in kind or "None" in kind:
            return None if raw.lower() in ("", "none") else float(raw)
        if kind in ("int", "<class 'int'>"):
            return int(raw)
        if kind in ("float", "<class 'float'>"):
            return float(raw)
    except ValueError as exc:
        raise UsageError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def read_config_file(path) -> Dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES and key not in RUN_KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def resolve_config(args) -> tuple:
    """Defaults < config file < flags. Returns ``(TrainConfig, run_options)``."""
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in list(_FIELD_TYPES) + list(RUN_KEYS):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    run = {k: values.pop(k) for k in list(values) if k in RUN_KEYS}
    run.setdefault("env", "dataset")
    run.setdefault("dataset", None)
    run.setdefault("workers", 1)
    try:
        cfg = TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg, run


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = str(f.type)
        if f.name == "clip_norm":
            p.add_argument(flag, dest=f.name, type=float, default=None)
        elif kind == "int":
            p.add_argument(flag, dest=f.name, type=int, default=None)
        elif kind == "float":
            p.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None)
    p.add_argument("--steps", dest="total_steps", type=int, default=None, help="alias of --total-steps")
    _add_env_flags(p)


def _add_env_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", choices=("sim", "dataset"), default=None)
    p.add_argument("--dataset", default=None, help="recorded dataset file (default: record in memory)")
    p.add_argument("--workers", type=int, default=None)


# ---------------------------------------------------------------------------
# manifests


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def env_hash(env, dataset_path=None) -> Optional[str]:
    if dataset_path is not None:
        return file_sha256(dataset_path)
    if isinstance(env, DatasetEnv):
        return env.dataset.content_hash()
    return None


def write_manifest(out: Path, command: str, config: Optional[TrainConfig], run: dict,
                   env=None, extra: Optional[dict] = None) -> Path:
    doc = {"command": command, "version": __version__, "python": platform.python_version(),
           "numpy": np.__version__, "argv": sys.argv[1:]}
    if config is not None:
        doc["config"] = dataclasses.asdict(config)
        doc["seed"] = config.seed
    doc["env"] = run.get("env")
    doc["dataset"] = run.get("dataset")
    if env is not None:
        doc["dataset_sha256"] = env_hash(env, run.get("dataset"))
    doc.update(extra or {})
    path = out / "run.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path) -> HapticAttentionModel:
    """Checkpoint plus the core/combiner recorded in its manifest."""
    params = load_checkpoint(path)
    meta = {}
    mpath = manifest_path(path)
    if mpath.exists():
        for line in mpath.read_text().splitlines():
            if " = " in line:
                k, v = line.split(" = ", 1)
                meta[k.strip()] = v.strip()
    config = ModelConfig(combiner=meta.get("combiner", "concat2"), core=meta.get("core", "lstm"))
    model = HapticAttentionModel(config, params=params)
    meta["glances"] = int(meta["glances"]) if "glances" in meta else None
    model.meta = meta
    return model


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv_ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_words(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_record_dataset(args) -> int:
    from .touch import record_dataset

    out = _out_dir(args.out)
    path = out / "glances.bin"
    ds = record_dataset(path)
    if args.csv:
        ds.export_csv(out / "glances.csv")
    digest = file_sha256(path)
    doc = {"command": "record-dataset", "version": __version__, "records": ds.n_records,
           "shape": list(ds.pressure.shape), "x0": ds.x0, "phi0": ds.phi0, "dx": ds.dx,
           "dphi": ds.dphi, "file": path.name, "sha256": digest}
    (out / "run.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"records = {ds.n_records}")
    print(f"wrote {path} sha256 {digest}")
    return 0


def cmd_train(args) -> int:
    cfg, run = resolve_config(args)
    out = _out_dir(args.out)
    env = make_env(run["env"], run["dataset"])
    write_manifest(out, "train", cfg, run, env)

    def progress(row):
        if row["snapshot_accuracy"] is not None and not args.quiet:
            print(f"step {row['step']:>6}  lr {row['lr']:.3e}  reward {row['mean_reward']:.3f}  "
                  f"accuracy {row['snapshot_accuracy']:.4f}", flush=True)

    start = time.process_time()
    res = train(cfg, env, out_dir=out, progress=progress,
                stop_on_divergence=args.stop_on_divergence)
    summary = {"cpu_seconds": round(time.process_time() - start, 1),
               "diverged_step": res.diverged_step, "best_step": res.best_step,
               "best_accuracy": res.best_accuracy,
               "best_averaged_accuracy": res.best_averaged_accuracy,
               "snapshots": [dataclasses.asdict(s) for s in res.snapshots]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if res.diverged_step is not None:
        print(f"diverged at step {res.diverged_step}; training stopped")
    print(f"best accuracy {res.best_accuracy:.4f} at step {res.best_step}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    model = load_model(args.checkpoint)
    glances = args.glances or model.meta.get("glances") or 3
    run = {"env": args.env or "dataset", "dataset": args.dataset}
    env = make_env(run["env"], run["dataset"])
    ev = evaluate(model, env, glances, n_batches=args.batches, seed=args.seed, tag=args.tag,
                  location=args.location)
    doc = {"checkpoint": str(args.checkpoint), "glances": glances, "episodes": ev.n_episodes,
           "accuracy": ev.accuracy, "averaged_accuracy": ev.averaged_accuracy,
           "per_glance": list(ev.per_glance), "seed": args.seed, "location": args.location}
    print(json.dumps(doc, indent=2))
    if args.out:
        out = _out_dir(args.out)
        write_manifest(out, "eval", None, run, env, {"checkpoint": str(args.checkpoint)})
        (out / "eval.json").write_text(json.dumps(doc, indent=2) + "\n")
        if args.plot:
            from .plots import line_plot_svg

            (out / "per_glance.svg").write_text(line_plot_svg(
                {"final": list(range(1, glances + 1))}, {"final": list(ev.per_glance)},
                "accuracy per glance", "glance", "accuracy"))
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import ablation_checks, run_variants, write_table

    cfg, run = resolve_config(args)
    out = _out_dir(args.out)
    env = make_env(run["env"], run["dataset"])
    write_manifest(out, "ablate", cfg, run, env,
                   {"variants": args.variants, "glance_counts": args.glance_counts,
                    "combiners": args.combiners, "repeats": args.repeats})
    seeds = [cfg.seed + k for k in range(args.repeats)]
    reports = []
    for combiner in args.combiners:
        for s in args.glance_counts:
            base = cfg.replace(glances=s, combiner=combiner)
            variants = args.variants if combiner == "concat2" else ["full"]
            for r in run_variants(variants, base, seeds=seeds, env_kind=run["env"],
                                  dataset_path=run["dataset"], workers=run["workers"]):
                r.save(out / f"report_{r.variant}_S{s}_{combiner}.json")
                n_div = sum(d is not None for d in r.diverged)
                print(f"{r.variant:>13} S={s:<2} {combiner:>8}  {r.mean:.4f} +- {r.sem:.4f}"
                      f"  ({n_div} of {r.repeats} diverged)", flush=True)
                reports.append(r)
    write_table(out / "table.csv", reports)
    write_combiner_table(out / "combiners.csv", reports)
    status = 0
    if args.check:
        checks = ablation_checks(reports)
        for c in checks:
            print(c.line())
        status = 0 if all(c.passed for c in checks) else 1
    return status


def write_combiner_table(path, reports) -> None:
    import csv

    rows = [r for r in reports if r.variant == "full"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["combiner", "glances", "mean", "sem", "repeats"])
        for r in rows:
            w.writerow([r.config.get("combiner"), r.glances, f"{r.mean:.4f}", f"{r.sem:.4f}", r.repeats])


def cmd_heatmap(args) -> int:
    from .evaluation import build_heatmaps, heatmap_svg

    model = load_model(args.checkpoint)
    glances = args.glances or model.meta.get("glances") or 10
    run = {"env": args.env or "dataset", "dataset": args.dataset}
    env = make_env(run["env"], run["dataset"])
    out = _out_dir(args.out)
    grids = build_heatmaps(model, env, glances, args.bins, args.batches, seed=args.seed)
    summary = {}
    for o, g in grids.items():
        g.write_csv(out / f"heatmap_object{o}.csv")
        g.write_svg(out / f"heatmap_object{o}.svg")
        m = g.mean_counts
        mmax = m.max()
        (out / f"heatmap_object{o}_mu.svg").write_text(
            heatmap_svg(m / mmax if mmax > 0 else m.astype(float), f"object {o} (policy means)"))
        summary[o] = {"total": g.total, "normalization_max": g.normalization_max,
                      "modal_bin": g.modal_bin(), "modal_phi_bin": g.modal_phi_bin()}
    write_manifest(out, "heatmap", None, run, env,
                   {"checkpoint": str(args.checkpoint), "glances": glances, "batches": args.batches,
                    "bins": args.bins, "seed": args.seed})
    (out / "heatmap_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    rep = run_gradcheck(n_coords=args.coords, seed=args.seed)
    print(f"hybrid loss   max relative error {rep.hybrid:.3e} over {rep.n_coords} coordinates")
    print(f"baseline loss max relative error {rep.baseline:.3e}")
    print(f"lstm unroll   max relative error {rep.lstm:.3e}")
    ok = rep.passed(args.tol)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_report(args) -> int:
    from .evaluation import AccuracyReport, ablation_checks, write_table
    from .plots import line_plot_svg

    reports = []
    for d in args.inputs:
        for p in sorted(Path(d).glob("report_*.json")):
            reports.append(AccuracyReport.from_json(json.loads(p.read_text())))
    if not reports:
        print("no report_*.json files found", file=sys.stderr)
        return 1
    out = _out_dir(args.out)
    write_table(out / "table.csv", reports)
    write_combiner_table(out / "combiners.csv", reports)
    xs, ys = {}, {}
    for r in sorted(reports, key=lambda r: r.glances):
        if r.config.get("combiner", "concat2") != "concat2":
            continue
        xs.setdefault(r.variant, []).append(r.glances)
        ys.setdefault(r.variant, []).append(r.mean)
    (out / "accuracy_vs_glances.svg").write_text(
        line_plot_svg(xs, ys, "best accuracy by glance budget", "glances", "accuracy"))
    for c in ablation_checks(reports):
        print(c.line())
    print((out / "table.csv").read_text(), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamlab", description="Haptic attention model lab.")
    parser.add_argument("--version", action="version", version=f"hamlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record-dataset", help="glance every object on the pose grid")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", action="store_true", help="also export a large CSV")
    p.set_defaults(func=cmd_record_dataset)

    p = sub.add_parser("train", help="train one model")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--stop-on-divergence", action="store_true",
                   help="end training at a numerical divergence instead of failing")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="measure a checkpoint on fresh episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--glances", type=int, default=None)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag", type=int, default=0)
    p.add_argument("--location", choices=("learned", "uniform"), default="learned")
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true", help="per-glance accuracy SVG")
    _add_env_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train variant repeats and tabulate")
    _add_train_flags(p)
    p.add_argument("--variants", type=_csv_words, default=["full", "rloc", "mlp", "mlp-averaged"])
    p.add_argument("--glance-counts", type=_csv_ints, default=list(range(1, 11)))
    p.add_argument("--combiners", type=_csv_words, default=["concat2"])
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--check", action="store_true", help="exit 1 if a threshold fails")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("heatmap", help="last-glance visit counts per object")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--glances", type=int, default=None)
    p.add_argument("--batches", type=int, default=1000)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_env_flags(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="collect ablation reports into a table and plot")
    p.add_argument("inputs", nargs="+", help="directories holding report_*.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hamlab: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"hamlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
