"""Reproducible wearable-style corruptions applied to the 4 source rows only."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import dsp
from .dataset import Segment

CONDITIONS = ("clean", "awgn", "emg", "dropout", "gain", "mixed")


@dataclass(frozen=True)
class PerturbSpec:
    condition: str = "mixed"
    awgn_db: float = 10.0
    emg_db: float = 10.0
    n_bursts: int = 2
    burst_range: tuple[float, float] = (0.30, 0.80)
    chan_prob: float = 0.50
    dropout_s: float = 0.50
    gain_rho: float = 0.20
    emg_band: tuple[float, float] = (20.0, 45.0)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}; choose from {CONDITIONS}")
        if min(self.burst_range) <= 0 or self.dropout_s <= 0:
            raise ValueError("durations must be positive")
        if not 0 <= self.gain_rho < 1:
            raise ValueError("gain_rho must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["burst_range"] = list(self.burst_range)
        d["emg_band"] = list(self.emg_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbSpec":
        d = dict(d)
        for k in ("burst_range", "emg_band"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def derive_seed(seed: int, condition: str, repeat: int, index: int) -> int:
    """64-bit stream seed from (split seed, condition, repeat, segment index)."""
    key = f"{int(seed)}|{condition}|{int(repeat)}|{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def derive_rng(seed: int, condition: str, repeat: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, condition, repeat, index)))


def _rms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(x * x, axis=-1))


def awgn(X, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise per channel at ``snr_db`` relative to channel RMS."""
    X = np.asarray(X, dtype=np.float64)
    sigma = _rms(X) / np.sqrt(10.0 ** (snr_db / 10.0))
    return X + sigma[:, None] * rng.standard_normal(X.shape)


def band_noise(n: int, fs: float, band, rng: np.random.Generator) -> np.ndarray:
    """White noise with every DFT bin outside ``band`` zeroed."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    return np.fft.irfft(spec, n=n)


def emg_burst(X, fs: float, snr_db: float, rng: np.random.Generator, n_bursts: int = 2,
              dur_range=(0.30, 0.80), chan_prob: float = 0.50, band=(20.0, 45.0),
              return_bursts: bool = False):
    """Hann-enveloped band-limited bursts; each burst's RMS over its support is
    RMS(channel) / sqrt(10^(snr/10))."""
    X = np.asarray(X, dtype=np.float64)
    out = X.copy()
    T = X.shape[-1]
    bursts = []
    ref = _rms(X)
    for c in range(X.shape[0]):
        if rng.random() >= chan_prob:
            continue
        for _ in range(n_bursts):
            n = int(round(rng.uniform(*dur_range) * fs))
            n = max(2, min(n, T))
            start = int(rng.integers(0, T - n + 1))
            b = band_noise(n, fs, band, rng) * dsp.hann(n)
            b *= (ref[c] / np.sqrt(10.0 ** (snr_db / 10.0))) / (np.sqrt(np.mean(b * b)) + 1e-300)
            out[c, start:start + n] += b
            bursts.append((c, start, b))
    return (out, bursts) if return_bursts else out


def dropout(X, fs: float, rng: np.random.Generator, duration: float = 0.50,
            return_mask: bool = False):
    """Zero one contiguous window in one uniformly chosen channel."""
    X = np.asarray(X, dtype=np.float64)
    n = int(round(duration * fs))
    T = X.shape[-1]
    if n > T:
        raise ValueError(f"dropout window of {n} samples exceeds T={T}")
    c = int(rng.integers(0, X.shape[0]))
    start = int(rng.integers(0, T - n + 1))
    mask = np.ones_like(X)
    mask[c, start:start + n] = 0.0
    out = X * mask
    return (out, mask) if return_mask else out


def gain_mismatch(X, rng: np.random.Generator, rho: float = 0.20, return_gains: bool = False):
    X = np.asarray(X, dtype=np.float64)
    g = rng.uniform(1.0 - rho, 1.0 + rho, size=X.shape[0])
    out = X * g[:, None]
    return (out, g) if return_gains else out


MIXED_ORDER = ("gain", "awgn", "emg", "dropout")


def mixed(X, fs: float, rng: np.random.Generator, spec: PerturbSpec = PerturbSpec(),
          enable=MIXED_ORDER) -> np.ndarray:
    """gain -> AWGN -> EMG -> dropout, all drawing from one stream."""
    out = np.asarray(X, dtype=np.float64)
    for step in MIXED_ORDER:
        if step not in enable:
            continue
        if step == "gain":
            out = gain_mismatch(out, rng, spec.gain_rho)
        elif step == "awgn":
            out = awgn(out, spec.awgn_db, rng)
        elif step == "emg":
            out = emg_burst(out, fs, spec.emg_db, rng, spec.n_bursts, spec.burst_range,
                            spec.chan_prob, spec.emg_band)
        else:
            out = dropout(out, fs, rng, spec.dropout_s)
    return out


def apply_condition(X, fs: float, spec: PerturbSpec, rng: np.random.Generator) -> np.ndarray:
    cond = spec.condition
    if cond == "clean":
        return np.array(X, dtype=np.float64)
    if cond == "mixed":
        return mixed(X, fs, rng, spec)
    return mixed(X, fs, rng, spec, enable=(cond,))


def perturb_segment(seg: Segment, spec: PerturbSpec, seed: int, repeat: int, index: int) -> Segment:
    """Corrupt the sources of one segment; the target array is passed through untouched."""
    rng = derive_rng(seed, spec.condition, repeat, index)
    return Segment(seg.subject_id, apply_condition(seg.sources, seg.fs, spec, rng), seg.targets, seg.fs)


def perturb_sources(sources: np.ndarray, fs: float, spec: PerturbSpec, seed: int, repeat: int,
                    indices=None) -> np.ndarray:
    """(n, 4, T) batch version; segment i uses stream (seed, condition, repeat, indices[i])."""
    indices = range(len(sources)) if indices is None else indices
    return np.stack([apply_condition(x, fs, spec, derive_rng(seed, spec.condition, repeat, i))
                     for x, i in zip(sources, indices)])


def standalone(condition: str, **overrides) -> PerturbSpec:
    """Single-condition spec reusing the mixed condition's component parameters."""
    return replace(PerturbSpec(), condition=condition, **overrides)
