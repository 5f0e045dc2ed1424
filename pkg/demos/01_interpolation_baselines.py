"""Walk-through: how far do classic scalp interpolators get from four frontal electrodes?

Generates a small synthetic cohort, interpolates the 13 posterior targets with
nearest-neighbour, inverse-distance and spherical-spline baselines, and prints
waveform and spectral scores for each.

    python3 demos/01_interpolation_baselines.py
"""

import numpy as np

from favc import baselines, dsp, objectives
from favc.dataset import SynthConfig, compute_stats, standard_montage, synth_dataset

cfg = SynthConfig(fs=128.0, T=256)
segments = synth_dataset(n_subjects=12, segments_per_subject=2, cfg=cfg, seed=3)
X = np.stack([s.sources for s in segments])
Y = np.stack([s.targets for s in segments])
sigma = compute_stats(segments).target_std
welch = dsp.WelchConfig(fs=cfg.fs, nwin=128, hop=64)
montage = standard_montage()

print(f"{len(segments)} segments, sources {X.shape[1:]}, targets {Y.shape[1:]}")
print(f"{'method':8s} {'nMAE':>7s} {'r':>7s} {'LSD':>7s} {'KL':>7s} {'SCI':>7s} {'CFTC':>7s}")
for name, fn in baselines.BASELINES.items():
    rep = objectives.evaluate(fn(X, montage), Y, sigma, welch, [s.subject_id for s in segments])
    s = rep.summary()
    print(f"{name:8s}" + "".join(f" {s[k][0]:7.3f}" for k in ("nmae", "pearson", "lsd", "kl", "sci", "cftc")))

# The spline is a fixed linear map, so its 13x4 weight matrix tells the whole story.
W = baselines.spline_matrix(montage)
print("\nspherical-spline weights (rows: targets, columns: Fp1 Fp2 F7 F8)")
for t, row in zip(montage.names[4:], W):
    print(f"  {t:4s}" + "".join(f" {w:+.3f}" for w in row))
