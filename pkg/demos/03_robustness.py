"""Corrupt the frontal inputs and see which method degrades least.

Reuses the checkpoint from demo 02 (same out_dir) and runs every perturbation
condition with three repeats, then prints the LSD row of each condition.

    python3 demos/03_robustness.py [out_dir]
"""

import sys

import numpy as np

from favc import perturb, report

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
cfg = report.ExperimentConfig.from_dict({
    "out": out,
    "synth": {"n_subjects": 48, "segments_per_subject": 4},
    "train": {"lr": 3e-3, "max_epochs": 60},
})

# One corrupted segment, to show what each condition does to the raw signal.
x = np.random.default_rng(0).standard_normal((4, 256))
for cond in perturb.CONDITIONS[1:]:
    y = perturb.apply_condition(x, 128.0, perturb.standalone(cond), perturb.derive_rng(0, cond, 0, 0))
    print(f"{cond:8s} relative change {np.linalg.norm(y - x) / np.linalg.norm(x):.3f}")

grid = report.run_robustness(cfg)
print()
for (cond, metric), row in grid["rows"].items():
    if metric != "lsd":
        continue
    means = "  ".join(f"{m} {row[f'{m}_mean']:.3f}" for m in report.METHODS)
    print(f"{cond:8s} {means}  Wilcoxon p vs {row['comparator']}: {row['wilcoxon_p']:.4f}")
