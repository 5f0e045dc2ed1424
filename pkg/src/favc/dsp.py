"""Signal-processing kernels shared by preprocessing, the spectral loss and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

EPS = 1e-8

BANDS: tuple[tuple[str, float, float], ...] = (
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("low_gamma", 30.0, 45.0),
)


@dataclass(frozen=True)
class WelchConfig:
    """Welch parameters plus the analysis band [fmin, fmax].

    The default (2 s Hann window, 50 % overlap at 500 Hz) gives a 0.5 Hz grid,
    so the 0.5-45 Hz range holds exactly 90 bins and a 6 s segment yields
    five averaged frames.
    """

    fs: float = 500.0
    nwin: int = 1000
    hop: int = 500
    fmin: float = 0.5
    fmax: float = 45.0

    @property
    def df(self) -> float:
        return self.fs / self.nwin

    def bin_slice(self) -> slice:
        k = np.arange(self.nwin // 2 + 1)
        f = k * self.df
        sel = np.flatnonzero((f >= self.fmin - 1e-9) & (f <= self.fmax + 1e-9))
        if sel.size == 0:
            raise ValueError("analysis band contains no frequency bins")
        return slice(int(sel[0]), int(sel[-1]) + 1)

    @property
    def freqs(self) -> np.ndarray:
        s = self.bin_slice()
        return np.arange(s.start, s.stop) * self.df

    def n_frames(self, length: int) -> int:
        if length < self.nwin:
            raise ValueError(f"signal of {length} samples is shorter than one window ({self.nwin})")
        return (length - self.nwin) // self.hop + 1

    def to_dict(self) -> dict:
        return {"fs": self.fs, "nwin": self.nwin, "hop": self.hop,
                "fmin": self.fmin, "fmax": self.fmax}


def band_masks(freqs: np.ndarray, bands=BANDS) -> np.ndarray:
    """Boolean (K, n_bins) membership; the last band is closed on the right."""
    masks = []
    for i, (_, lo, hi) in enumerate(bands):
        upper = freqs <= hi if i == len(bands) - 1 else freqs < hi
        masks.append((freqs >= lo) & upper)
    return np.array(masks)


def bandpass(x, fs: float, lo: float = 0.5, hi: float = 45.0, order: int = 4,
             axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward second-order sections)."""
    if not (0 < lo < hi < fs / 2):
        raise ValueError(f"invalid band edges lo={lo}, hi={hi} for fs={fs}")
    sos = sp_signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return sp_signal.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=axis)


def hann(n: int) -> np.ndarray:
    """Symmetric Hann window, w[l] = 0.5 - 0.5 cos(2 pi l / (n - 1))."""
    if n < 2:
        raise ValueError("hann window needs n >= 2")
    ell = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * ell / (n - 1))


def frame_indices(length: int, cfg: WelchConfig) -> np.ndarray:
    n = cfg.n_frames(length)
    return np.arange(n)[:, None] * cfg.hop + np.arange(cfg.nwin)[None, :]


def welch_psd(x, cfg: WelchConfig = WelchConfig()) -> np.ndarray:
    """Welch PSD over the last axis, restricted to the analysis band.

    Each Hann-windowed frame's periodogram is normalized by ``fs * sum(w**2)``
    and frames are averaged. No one-sided doubling is applied, so the band
    covers half of the two-sided spectrum (white noise of variance s2 has
    density s2 / fs).
    """
    x = np.asarray(x, dtype=np.float64)
    w = hann(cfg.nwin)
    frames = x[..., frame_indices(x.shape[-1], cfg)] * w
    spec = np.fft.rfft(frames, axis=-1)
    power = (spec.real ** 2 + spec.imag ** 2).mean(axis=-2) / (cfg.fs * np.sum(w * w))
    return power[..., cfg.bin_slice()]


def band_fractions(psd, freqs: np.ndarray, bands=BANDS) -> np.ndarray:
    """Relative band allocation, rho_k = sum_{B_k} S / (sum_F S + eps)."""
    psd = np.asarray(psd, dtype=np.float64)
    masks = band_masks(freqs, bands).astype(np.float64)
    return (psd @ masks.T) / (psd.sum(axis=-1, keepdims=True) + EPS)


def slope_weights(freqs: np.ndarray, fit_lo: float = 2.0, fit_hi: float = 40.0) -> np.ndarray:
    """Weights v such that v @ log(S) is the OLS slope against log(f)."""
    sel = (freqs >= fit_lo) & (freqs <= fit_hi)
    if sel.sum() < 3:
        raise ValueError(f"fewer than 3 bins in the slope fit range [{fit_lo}, {fit_hi}] Hz")
    lf = np.log(freqs[sel])
    dev = lf - lf.mean()
    v = np.zeros(freqs.shape)
    v[sel] = dev / np.sum(dev * dev)
    return v


def spectral_slope(psd, freqs: np.ndarray, fit_lo: float = 2.0, fit_hi: float = 40.0):
    """Log-log least-squares slope of the PSD over [fit_lo, fit_hi] Hz."""
    return np.log(np.asarray(psd, dtype=np.float64) + EPS) @ slope_weights(freqs, fit_lo, fit_hi)


def log_band_power(psd, freqs: np.ndarray, bands=BANDS) -> np.ndarray:
    """log(sum_{f in B_k} S(f) + eps) per band (raw bin sums, no df factor)."""
    masks = band_masks(freqs, bands).astype(np.float64)
    return np.log(np.asarray(psd, dtype=np.float64) @ masks.T + EPS)
