"""Dual-domain training loss (differentiable) and reconstruction/robustness metrics (numpy)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from . import tensor as tc
from .dsp import EPS, WelchConfig
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    w_wave: float = 0.90
    w_psd: float = 0.10
    lam_log: float = 1.0
    lam_band: float = 1.0
    lam_slope: float = 0.5

    def __post_init__(self):
        vals = (self.w_wave, self.w_psd, self.lam_log, self.lam_band, self.lam_slope)
        if min(vals) < 0:
            raise ValueError("loss weights must be non-negative")
        if abs(self.w_wave + self.w_psd - 1.0) > 1e-12:
            raise ValueError("w_wave + w_psd must equal 1")

    @classmethod
    def with_psd(cls, w_psd: float, **kw) -> "LossWeights":
        return cls(w_wave=1.0 - w_psd, w_psd=w_psd, **kw)


# instrumentation: how many times the differentiable Welch path ran
WELCH_CALLS = {"count": 0}


def welch_psd_t(y, cfg: WelchConfig) -> Tensor:
    """Differentiable twin of :func:`favc.dsp.welch_psd` over the last axis."""
    WELCH_CALLS["count"] += 1
    y = tc.as_tensor(y)
    T = y.shape[-1]
    n_frames = cfg.n_frames(T)
    frames = tc.stack([tc.getitem(y, (Ellipsis, slice(i * cfg.hop, i * cfg.hop + cfg.nwin)))
                       for i in range(n_frames)], axis=-2)
    w = dsp.hann(cfg.nwin)
    power = tc.rfft_power(tc.mul(frames, w))
    psd = tc.scale(tc.mean(power, axis=-2), 1.0 / (cfg.fs * np.sum(w * w)))
    return tc.getitem(psd, (Ellipsis, cfg.bin_slice()))


def wave_loss(y_hat, y, sigma) -> Tensor:
    """mean_{c,t} |y_hat - y| / (sigma_c + eps); channels on axis -2."""
    inv = 1.0 / (np.asarray(sigma, dtype=np.float64) + EPS)
    return tc.mean(tc.mul(tc.abs_(tc.sub(y_hat, y)), inv[:, None]))


def psd_loss(y_hat, y, cfg: WelchConfig, weights: LossWeights = LossWeights(),
             fit_range=(2.0, 40.0)) -> Tensor:
    """Log-PSD L1 + band-allocation L1 + spectral-slope L1, each averaged."""
    freqs = cfg.freqs
    S = dsp.welch_psd(np.asarray(y.data if isinstance(y, Tensor) else y), cfg)
    S_hat = welch_psd_t(y_hat, cfg)
    log_hat = tc.log(S_hat, EPS)
    log_true = np.log(S + EPS)
    terms = []
    if weights.lam_log:
        terms.append(tc.scale(tc.mean(tc.abs_(tc.sub(log_hat, log_true))), weights.lam_log))
    if weights.lam_band:
        masks = dsp.band_masks(freqs).astype(np.float64).T
        rho_hat = tc.div(tc.matmul(S_hat, masks), tc.add(tc.sum_(S_hat, axis=-1, keepdims=True), EPS))
        rho = dsp.band_fractions(S, freqs)
        terms.append(tc.scale(tc.mean(tc.abs_(tc.sub(rho_hat, rho))), weights.lam_band))
    if weights.lam_slope:
        v = dsp.slope_weights(freqs, *fit_range)[:, None]
        beta_hat = tc.matmul(log_hat, v)
        beta = log_true @ v
        terms.append(tc.scale(tc.mean(tc.abs_(tc.sub(beta_hat, beta))), weights.lam_slope))
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def total_loss(y_hat, y, sigma, cfg: WelchConfig, weights: LossWeights = LossWeights()):
    """0.90 * wave + 0.10 * psd (weights configurable). Returns (loss, parts dict).

    With ``w_psd == 0`` the Welch path is never evaluated.
    """
    lw = wave_loss(y_hat, y, sigma)
    parts = {"wave": float(lw.data)}
    loss = tc.scale(lw, weights.w_wave)
    if weights.w_psd > 0:
        lp = psd_loss(y_hat, y, cfg, weights)
        parts["psd"] = float(lp.data)
        loss = loss + tc.scale(lp, weights.w_psd)
    else:
        parts["psd"] = float("nan")
    parts["total"] = float(loss.data)
    return loss, parts


# --------------------------------------------------------------------------
# metrics (numpy). Arrays are (..., channels, T) or (..., channels, bins).


def nmae(y_hat, y, sigma) -> np.ndarray:
    """Per-channel normalized MAE, shape (..., channels)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return np.abs(np.asarray(y_hat) - np.asarray(y)).mean(axis=-1) / (sigma + EPS)


def raw_mae(nmae_values, sigma) -> np.ndarray:
    """uV-scale MAE derived from nMAE through the training-set channel std."""
    return np.asarray(nmae_values) * np.asarray(sigma)


def pearson(y_hat, y) -> np.ndarray:
    a = np.asarray(y_hat, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    return (a * b).sum(-1) / np.sqrt((a * a).sum(-1) * (b * b).sum(-1) + EPS)


def _logdiff(S_hat, S):
    S_hat, S = np.asarray(S_hat, dtype=np.float64), np.asarray(S, dtype=np.float64)
    if S_hat.shape != S.shape:
        raise ValueError(f"PSD grids differ: {S_hat.shape} vs {S.shape}")
    return np.log(S_hat + EPS) - np.log(S + EPS)


def lsd(S_hat, S, per_channel: bool = False) -> np.ndarray:
    """Root mean squared log-PSD difference over channels and bins (or bins only)."""
    d2 = _logdiff(S_hat, S) ** 2
    if per_channel:
        return np.sqrt(d2.mean(axis=-1))
    return np.sqrt(d2.mean(axis=(-2, -1)))


def psd_kl(S_hat, S, per_channel: bool = False) -> np.ndarray:
    """KL(p || p_hat) of frequency-normalized spectra, averaged over channels."""
    S_hat, S = np.asarray(S_hat, dtype=np.float64), np.asarray(S, dtype=np.float64)
    if S_hat.shape != S.shape:
        raise ValueError(f"PSD grids differ: {S_hat.shape} vs {S.shape}")
    p = S / (S.sum(axis=-1, keepdims=True) + EPS)
    q = S_hat / (S_hat.sum(axis=-1, keepdims=True) + EPS)
    kl = (p * np.log((p + EPS) / (q + EPS))).sum(axis=-1)
    return kl if per_channel else kl.mean(axis=-1)


def _corr_flat(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den <= 0:
        warnings.warn("CFTC of a zero-variance log-PSD grid is undefined; returning 0", RuntimeWarning)
        return 0.0
    return float((a * b).sum() / den)


def cftc(S_hat, S) -> np.ndarray:
    """Pearson correlation of flattened log-PSD (channels x bins) grids, per segment."""
    lh = np.log(np.asarray(S_hat, dtype=np.float64) + EPS)
    lt = np.log(np.asarray(S, dtype=np.float64) + EPS)
    if lh.shape != lt.shape:
        raise ValueError(f"PSD grids differ: {lh.shape} vs {lt.shape}")
    if lh.ndim == 2:
        return np.asarray(_corr_flat(lh.ravel(), lt.ravel()))
    flat_h = lh.reshape(-1, lh.shape[-2] * lh.shape[-1])
    flat_t = lt.reshape(flat_h.shape)
    return np.array([_corr_flat(a, b) for a, b in zip(flat_h, flat_t)]).reshape(lh.shape[:-2])


def _mean_pair_distance(L: np.ndarray) -> np.ndarray:
    C = L.shape[-2]
    i, j = np.triu_indices(C, 1)
    d = np.linalg.norm(L[..., i, :] - L[..., j, :], axis=-1)
    return d.mean(axis=-1)


def sci(S_hat, S, freqs: np.ndarray, bands=dsp.BANDS):
    """Spectral-collapse index. Returns (sci, pair, topo), each per segment."""
    lh = np.log(np.asarray(S_hat, dtype=np.float64) + EPS)
    lt = np.log(np.asarray(S, dtype=np.float64) + EPS)
    d_pred = _mean_pair_distance(lh)
    d_true = _mean_pair_distance(lt)
    # the eps guard floors the denominator instead of shifting it, so a perfect
    # prediction scores exactly 0 rather than eps / D
    pair = np.maximum(1.0 - d_pred / np.maximum(d_true, EPS), 0.0)
    topo = np.maximum(1.0 - btvr(S_hat, S, freqs, bands), 0.0).mean(axis=-1)
    return 0.5 * pair + 0.5 * topo, pair, topo


def btvr(S_hat, S, freqs: np.ndarray, bands=dsp.BANDS) -> np.ndarray:
    """Cross-channel std of predicted over true log band power, per band."""
    bp_hat = dsp.log_band_power(S_hat, freqs, bands)
    bp = dsp.log_band_power(S, freqs, bands)
    return bp_hat.std(axis=-2) / np.maximum(bp.std(axis=-2), EPS)


# --------------------------------------------------------------------------

SEGMENT_METRICS = ("nmae", "raw_mae", "pearson", "lsd", "kl", "sci", "sci_pair", "sci_topo", "cftc")
CHANNEL_METRICS = ("nmae", "raw_mae", "pearson", "lsd", "kl")
DIRECTION = {"nmae": -1, "raw_mae": -1, "pearson": 1, "lsd": -1, "kl": -1,
             "sci": -1, "sci_pair": -1, "sci_topo": -1, "cftc": 1}


@dataclass
class MetricReport:
    """Per-segment metric values; channel-resolved ones are (n, 13)."""

    subjects: list[str]
    channel: dict[str, np.ndarray] = field(default_factory=dict)
    segment: dict[str, np.ndarray] = field(default_factory=dict)

    def pooled(self) -> dict[str, np.ndarray]:
        """Per-segment pooled values (channel means for channel-resolved metrics)."""
        return dict(self.segment)

    def subject_level(self, metric: str) -> tuple[list[str], np.ndarray]:
        return subject_means(self.segment[metric], self.subjects)

    def summary(self) -> dict[str, tuple[float, float]]:
        """Cross-subject mean and std of the per-subject means."""
        out = {}
        for name in self.segment:
            _, vals = self.subject_level(name)
            out[name] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
        return out

    def channel_summary(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        out = {}
        for name, arr in self.channel.items():
            _, per_subj = subject_means(arr, self.subjects)
            sd = per_subj.std(axis=0, ddof=1) if len(per_subj) > 1 else np.zeros(arr.shape[1])
            out[name] = (per_subj.mean(axis=0), sd)
        return out


def evaluate(y_hat, y, sigma, cfg: WelchConfig, subjects) -> MetricReport:
    """All reconstruction and robustness metrics for (n, 13, T) raw-scale arrays."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape or y.ndim != 3:
        raise ValueError(f"expected matching (n, C, T) arrays, got {y_hat.shape} and {y.shape}")
    freqs = cfg.freqs
    S_hat = dsp.welch_psd(y_hat, cfg)
    S = dsp.welch_psd(y, cfg)
    ch = {
        "nmae": nmae(y_hat, y, sigma),
        "pearson": pearson(y_hat, y),
        "lsd": lsd(S_hat, S, per_channel=True),
        "kl": psd_kl(S_hat, S, per_channel=True),
    }
    ch["raw_mae"] = raw_mae(ch["nmae"], sigma)
    s_all, s_pair, s_topo = sci(S_hat, S, freqs)
    seg = {
        "nmae": ch["nmae"].mean(-1),
        "raw_mae": ch["raw_mae"].mean(-1),
        "pearson": ch["pearson"].mean(-1),
        "lsd": lsd(S_hat, S),
        "kl": psd_kl(S_hat, S),
        "sci": s_all, "sci_pair": s_pair, "sci_topo": s_topo,
        "cftc": cftc(S_hat, S),
    }
    return MetricReport(list(subjects), ch, seg)


def subject_means(values, subjects) -> tuple[list[str], np.ndarray]:
    """Average segment values within each subject (sorted subject order)."""
    values = np.asarray(values, dtype=np.float64)
    subjects = list(subjects)
    if len(subjects) != len(values):
        raise ValueError("every segment needs a subject")
    ids = sorted(set(subjects))
    sub = np.array(subjects)
    return ids, np.array([values[sub == s].mean(axis=0) for s in ids])


def subject_aggregate(values, subjects) -> dict:
    """Two-stage aggregation: per-subject means, then cross-subject mean and std."""
    ids, per = subject_means(values, subjects)
    return {"subjects": ids, "per_subject": per, "mean": per.mean(axis=0),
            "std": per.std(axis=0, ddof=1) if len(per) > 1 else np.zeros_like(per[0])}
