"""Train the toy network on synthetic data and compare it with the interpolators.

Takes a couple of minutes on one core. The learned model should beat the
nearest-neighbour and inverse-distance baselines on the spectral metrics.

    python3 demos/02_train_and_compare.py [out_dir]
"""

import sys

from favc import report

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
cfg = report.ExperimentConfig.from_dict({
    "out": out,
    "synth": {"n_subjects": 48, "segments_per_subject": 4},
    "train": {"lr": 3e-3, "max_epochs": 60},
})

trained = report.run_train(cfg)
res = trained["result"]
print(f"trained {res.steps} steps, best validation loss {res.best_val:.4f} at epoch {res.best_epoch}")

clean = report.run_report(cfg)
for name, rep in clean["reports"].items():
    s = rep.summary()
    print(f"{name:7s} nMAE {s['nmae'][0]:.3f}  LSD {s['lsd'][0]:.3f}  KL {s['kl'][0]:.3f}  SCI {s['sci'][0]:.3f}")
print("figures and tables:", ", ".join(p.name for p in clean["files"]))
