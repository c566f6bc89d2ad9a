"""The named training runs behind the acceptance artifacts in ``results/``.

``python -m hamlab.protocol [name ...] [--root DIR]`` replays them through the
command-line interface, serially, skipping runs whose output already exists.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# Matched step budget for the repeated ablation runs. The two reference runs
# use the full default budget.
ABLATION_STEPS = 10_000


def _ablate(steps: int, *args: str) -> List[str]:
    return ["ablate", "--total-steps", str(steps), "--repeats", "10", *args]


RUNS: Dict[str, List[str]] = {
    "full_S3": ["train", "--glances", "3", "--seed", "0"],
    "full_S10": ["train", "--glances", "10", "--seed", "0"],
    "location_S2": _ablate(ABLATION_STEPS, "--variants", "full,rloc", "--glance-counts", "2"),
    "location_S10": _ablate(ABLATION_STEPS, "--variants", "full,rloc", "--glance-counts", "10"),
    "memory": _ablate(ABLATION_STEPS, "--variants", "mlp,mlp-averaged", "--glance-counts", "2,6"),
    "combiners": _ablate(ABLATION_STEPS, "--glance-counts", "3",
                         "--combiners", "concat2,concat1,multiply,add"),
}

# marker file written by each command once it has finished
DONE_MARKER = {"train": "summary.json", "ablate": "table.csv"}


def argv_for(name: str, root: Path) -> List[str]:
    return [*RUNS[name], "--out", str(Path(root) / name)]


def is_done(name: str, root: Path) -> bool:
    return (Path(root) / name / DONE_MARKER[RUNS[name][0]]).exists()


def main(argv: Optional[Sequence[str]] = None) -> int:
    from . import cli

    p = argparse.ArgumentParser(prog="python -m hamlab.protocol")
    p.add_argument("names", nargs="*", help=f"subset of: {', '.join(RUNS)}")
    p.add_argument("--root", default="results")
    p.add_argument("--force", action="store_true", help="rerun finished runs")
    args = p.parse_args(argv)
    unknown = [n for n in args.names if n not in RUNS]
    if unknown:
        p.error(f"unknown run(s): {', '.join(unknown)}")
    for name in args.names or list(RUNS):
        if is_done(name, args.root) and not args.force:
            print(f"{name}: already done")
            continue
        print(f"{name}: hamlab {' '.join(argv_for(name, args.root))}", flush=True)
        status = cli.main(argv_for(name, args.root))
        if status != 0:
            return status
    return 0


if __name__ == "__main__":
    sys.exit(main())
