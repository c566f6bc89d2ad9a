"""
Where a trained policy touches
==============================

Builds last-glance heat-maps from the S = 10 reference checkpoint in
``results/full_S10`` (produce it with ``python -m hamlab.protocol
full_S10``) and prints the most visited bins per block.
"""

import sys
from pathlib import Path

import numpy as np

from hamlab.cli import load_model
from hamlab.envs import make_env
from hamlab.evaluation import build_heatmaps, phi_bin_range
from hamlab.touch import OBJECT_NAMES

ckpt = Path(__file__).resolve().parents[1] / "results" / "full_S10" / "best.ckpt"
if not ckpt.exists():
    sys.exit(f"{ckpt} not found")

model = load_model(ckpt)
grids = build_heatmaps(model, make_env("dataset"), glances=10, batches=200)

# %%
# Rows are tilt bins from -pi/2 (top) to pi/2, columns are offset bins.
for o, grid in grids.items():
    i, j = grid.modal_bin()
    lo, hi = phi_bin_range(j)
    print(f"\n{OBJECT_NAMES[o]}: {grid.total} episodes, modal bin x#{i}, phi in [{lo:.2f}, {hi:.2f}]")
    shades = " .:*#"
    for row in grid.ranked.T:
        print("".join(shades[min(int(v * len(shades)), len(shades) - 1)] for v in row))
