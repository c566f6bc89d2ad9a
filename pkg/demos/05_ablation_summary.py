"""
Ablation summary
================

Gathers the repeated-run reports under ``results/`` and prints the
accuracy table together with the ordering checks.
"""

import json
from pathlib import Path

from hamlab.evaluation import AccuracyReport, ablation_checks

root = Path(__file__).resolve().parents[1] / "results"
reports = [AccuracyReport.from_json(json.loads(p.read_text()))
           for p in sorted(root.glob("*/report_*.json"))]
if not reports:
    raise SystemExit("no reports yet; run `python -m hamlab.protocol`")

for r in sorted(reports, key=lambda r: (r.config.get("combiner"), r.variant, r.glances)):
    print(f"{r.variant:>13}  S={r.glances:<2} {r.config.get('combiner'):>8}  "
          f"{r.mean:.4f} +- {r.sem:.4f}  ({r.repeats} repeats, "
          f"{sum(d is not None for d in r.diverged)} diverged)")

# %%
print()
for check in ablation_checks(reports):
    print(check.line())
