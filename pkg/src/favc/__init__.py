"""FAVC: frequency-calibrated virtual EEG channels from four frontal electrodes.

A numpy/scipy laboratory with a small reverse-mode autodiff core, the
FAVC-Net generator, classical interpolation baselines, dual-domain metrics,
a seeded perturbation harness and report emission.
"""

from .dataset import (CHANNELS, SOURCES, TARGETS, ChannelStats, Montage, Segment, SynthConfig,
                      compute_stats, load_segments, save_segments, split_subjects, standard_montage,
                      synth_dataset)
from .dsp import WelchConfig, welch_psd
from .model import ArchConfig, FAVCNet, load_checkpoint, param_count, save_checkpoint
from .objectives import LossWeights, MetricReport, evaluate
from .perturb import CONDITIONS, PerturbSpec
from .stats import wilcoxon_signed_rank, win_rate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "CHANNELS", "CONDITIONS", "ChannelStats", "FAVCNet", "LossWeights", "MetricReport",
    "Montage", "PerturbSpec", "SOURCES", "Segment", "SynthConfig", "TARGETS", "TrainConfig",
    "WelchConfig", "compute_stats", "evaluate", "load_checkpoint", "load_segments", "param_count",
    "save_checkpoint", "save_segments", "split_subjects", "standard_montage", "synth_dataset", "train",
    "welch_psd", "wilcoxon_signed_rank", "win_rate",
]
