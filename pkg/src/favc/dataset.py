"""Segments, montage geometry, channel statistics, subject splits, storage, and
a synthetic multichannel EEG generator for desk-scale experiments."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp

SOURCES = ("Fp1", "Fp2", "F7", "F8")
TARGETS = ("F3", "Fz", "F4", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6")
CHANNELS = SOURCES + TARGETS

# (inclination from vertex, azimuth from the nose toward the right ear), degrees.
STANDARD_ANGLES: dict[str, tuple[float, float]] = {
    "Fp1": (90.0, -18.0), "Fp2": (90.0, 18.0),
    "F7": (90.0, -54.0), "F8": (90.0, 54.0),
    "F3": (60.0, -39.0), "Fz": (45.0, 0.0), "F4": (60.0, 39.0),
    "T3": (90.0, -90.0), "C3": (45.0, -90.0), "Cz": (0.0, 0.0),
    "C4": (45.0, 90.0), "T4": (90.0, 90.0),
    "T5": (90.0, -126.0), "P3": (60.0, -141.0), "Pz": (45.0, 180.0),
    "P4": (60.0, 141.0), "T6": (90.0, 126.0),
}

STORE_VERSION = 1


class StoreError(ValueError):
    """Malformed, truncated or incompatible segment store."""


# --------------------------------------------------------------------------
# montage


def sphere_xyz(inclination_deg, azimuth_deg) -> np.ndarray:
    """Unit vector with x to the right ear, y to the nose, z to the vertex."""
    th = np.radians(inclination_deg)
    ph = np.radians(azimuth_deg)
    return np.stack([np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.cos(th)], axis=-1)


def azimuthal_equidistant(xyz: np.ndarray) -> np.ndarray:
    """Project unit vectors to the plane: radius = angle from the vertex (rad)."""
    xyz = np.atleast_2d(xyz)
    theta = np.arccos(np.clip(xyz[:, 2], -1.0, 1.0))
    rho = np.hypot(xyz[:, 0], xyz[:, 1])
    safe = np.where(rho > 0, rho, 1.0)
    return np.where(rho[:, None] > 0, theta[:, None] * xyz[:, :2] / safe[:, None], 0.0)


@dataclass(frozen=True)
class Montage:
    names: tuple[str, ...]
    xyz: np.ndarray
    xy: np.ndarray
    source_idx: tuple[int, ...]
    target_idx: tuple[int, ...]

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def source_xyz(self) -> np.ndarray:
        return self.xyz[list(self.source_idx)]

    @property
    def target_xyz(self) -> np.ndarray:
        return self.xyz[list(self.target_idx)]

    @property
    def target_xy(self) -> np.ndarray:
        return self.xy[list(self.target_idx)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.names).encode())
        h.update(np.round(self.xyz, 9).astype("<f8").tobytes())
        return h.hexdigest()[:16]


def standard_montage(angles: dict[str, tuple[float, float]] | None = None) -> Montage:
    """17-channel montage from an inclination/azimuth table (standard 10-20 by default)."""
    angles = STANDARD_ANGLES if angles is None else angles
    names = CHANNELS
    if len(set(names)) != len(names):
        raise ValueError("duplicate channel names")
    xyz = np.array([sphere_xyz(*angles[n]) for n in names])
    return Montage(
        names=names,
        xyz=xyz,
        xy=azimuthal_equidistant(xyz),
        source_idx=tuple(range(len(SOURCES))),
        target_idx=tuple(range(len(SOURCES), len(CHANNELS))),
    )


# --------------------------------------------------------------------------
# segments and statistics


@dataclass
class Segment:
    subject_id: str
    sources: np.ndarray
    targets: np.ndarray | None = None
    fs: float = 500.0

    def __post_init__(self):
        self.sources = np.asarray(self.sources, dtype=np.float64)
        if self.sources.ndim != 2 or self.sources.shape[0] != len(SOURCES):
            raise ValueError(f"sources must be ({len(SOURCES)}, T), got {self.sources.shape}")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != (len(TARGETS), self.sources.shape[1]):
                raise ValueError(f"targets must be ({len(TARGETS)}, T), got {self.targets.shape}")
        if not np.all(np.isfinite(self.sources)) or (
                self.targets is not None and not np.all(np.isfinite(self.targets))):
            raise ValueError("segment contains non-finite samples")

    @property
    def T(self) -> int:
        return self.sources.shape[1]

    def all_rows(self) -> np.ndarray:
        if self.targets is None:
            return self.sources
        return np.vstack([self.sources, self.targets])


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = CHANNELS

    @property
    def source_mean(self):
        return self.mean[: len(SOURCES)]

    @property
    def source_std(self):
        return self.std[: len(SOURCES)]

    @property
    def target_mean(self):
        return self.mean[len(SOURCES):]

    @property
    def target_std(self):
        return self.std[len(SOURCES):]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   tuple(d["names"]))


STD_FLOOR = 1e-6


def compute_stats(train: list[Segment]) -> ChannelStats:
    """Pooled per-channel mean and population std over training segments."""
    if not train:
        raise ValueError("compute_stats needs at least one training segment")
    rows = [s.all_rows() for s in train]
    if any(r.shape[0] != len(CHANNELS) for r in rows):
        raise ValueError("training segments must carry targets")
    n = sum(r.shape[1] for r in rows)
    total = sum(r.sum(axis=1) for r in rows)
    mu = total / n
    ss = sum(((r - mu[:, None]) ** 2).sum(axis=1) for r in rows)
    sd = np.sqrt(ss / n)
    low = sd < STD_FLOOR
    if low.any():
        names = [CHANNELS[i] for i in np.flatnonzero(low)]
        warnings.warn(f"constant channels {names}: std floored at {STD_FLOOR}", RuntimeWarning)
        sd = np.where(low, STD_FLOOR, sd)
    return ChannelStats(mu, sd)


def _check_stats(stats: ChannelStats):
    if tuple(stats.names) != CHANNELS:
        missing = set(CHANNELS) - set(stats.names)
        raise KeyError(f"channel stats do not match the montage (missing {sorted(missing)})")


def normalize(seg: Segment, stats: ChannelStats) -> Segment:
    _check_stats(stats)
    src = (seg.sources - stats.source_mean[:, None]) / stats.source_std[:, None]
    tgt = None
    if seg.targets is not None:
        tgt = (seg.targets - stats.target_mean[:, None]) / stats.target_std[:, None]
    return Segment(seg.subject_id, src, tgt, seg.fs)


def denormalize(seg: Segment, stats: ChannelStats) -> Segment:
    _check_stats(stats)
    src = seg.sources * stats.source_std[:, None] + stats.source_mean[:, None]
    tgt = None
    if seg.targets is not None:
        tgt = seg.targets * stats.target_std[:, None] + stats.target_mean[:, None]
    return Segment(seg.subject_id, src, tgt, seg.fs)


# --------------------------------------------------------------------------
# subject splits

DEFAULT_RATIOS = (95, 11, 13)


@dataclass
class Split:
    seed: int
    train: list[str]
    val: list[str]
    test: list[str]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(int(d["seed"]), list(d["train"]), list(d["val"]), list(d["test"]))


def split_counts(n: int, ratios=DEFAULT_RATIOS) -> tuple[int, int, int]:
    if n < 3:
        raise ValueError(f"need at least 3 subjects to split, got {n}")
    total = float(sum(ratios))
    n_val = max(1, int(round(n * ratios[1] / total)))
    n_test = max(1, int(round(n * ratios[2] / total)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train, n_val, n_test = n - 2, 1, 1
    return n_train, n_val, n_test


def split_subjects(roster, seed: int, ratios=DEFAULT_RATIOS) -> Split:
    """Seeded, subject-disjoint train/val/test partition."""
    roster = sorted(set(roster))
    n_train, n_val, _ = split_counts(len(roster), ratios)
    order = np.random.default_rng(seed).permutation(len(roster))
    shuffled = [roster[i] for i in order]
    return Split(seed, sorted(shuffled[:n_train]), sorted(shuffled[n_train:n_train + n_val]),
                 sorted(shuffled[n_train + n_val:]))


# --------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class Latent:
    name: str
    band: tuple[float, float] | None  # None -> 1/f broadband
    inclination: float
    azimuth: float
    spread: float  # radians, Gaussian width of the spatial footprint
    amp: float
    dipole: float = 0.0  # anterior-posterior sign-flip strength


DEFAULT_LATENTS = (
    Latent("delta", (0.5, 4.0), 60.0, 0.0, 0.9, 1.0),
    Latent("theta", (4.0, 8.0), 40.0, 0.0, 0.7, 0.8, dipole=1.5),
    Latent("alpha", (8.0, 13.0), 75.0, 180.0, 0.85, 1.6),
    Latent("beta", (13.0, 30.0), 25.0, 0.0, 0.7, 0.5),
    Latent("low_gamma", (30.0, 45.0), 95.0, 90.0, 0.5, 0.35),
    Latent("aperiodic", None, 0.0, 0.0, 1.4, 1.0),
)


@dataclass(frozen=True)
class SynthConfig:
    fs: float = 500.0
    T: int = 3000
    latents: tuple[Latent, ...] = DEFAULT_LATENTS
    latent_gain: dict = field(default_factory=dict)
    noise: float = 0.05
    rms_range: tuple[float, float] = (5.0, 20.0)
    channel_jitter: float = 0.1
    jitter_deg: float = 10.0
    state_var: float = 0.35

    def to_dict(self) -> dict:
        return {"fs": self.fs, "T": self.T, "noise": self.noise, "rms_range": list(self.rms_range),
                "channel_jitter": self.channel_jitter,
                "jitter_deg": self.jitter_deg, "state_var": self.state_var,
                "latent_gain": dict(self.latent_gain)}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "rms_range" in d:
            d["rms_range"] = tuple(d["rms_range"])
        return cls(**d)


def _band_limited(rng: np.random.Generator, T: int, fs: float, band) -> np.ndarray:
    freqs = np.fft.rfftfreq(T, 1.0 / fs)
    spec = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    if band is None:
        sel = (freqs >= 0.5) & (freqs <= 45.0)
        spec = np.where(sel, spec / np.maximum(freqs, 0.5), 0.0)
    else:
        spec = np.where((freqs >= band[0]) & (freqs <= band[1]), spec, 0.0)
    x = np.fft.irfft(spec, n=T)
    return x / (np.sqrt(np.mean(x * x)) + 1e-12)


def _mixing(cfg: SynthConfig, montage: Montage, rng: np.random.Generator) -> np.ndarray:
    weights = []
    for lat in cfg.latents:
        inc = lat.inclination + rng.normal(0, cfg.jitter_deg)
        az = lat.azimuth + rng.normal(0, cfg.jitter_deg)
        loc = sphere_xyz(inc, az)
        d = np.linalg.norm(montage.xyz - loc, axis=1)
        w = np.exp(-0.5 * (d / lat.spread) ** 2)
        if lat.dipole:
            # sign flips along the anterior-posterior axis through the latent
            w = w * np.tanh(lat.dipole * (montage.xyz[:, 1] - loc[1]) / lat.spread + 0.5)
        amp = lat.amp * cfg.latent_gain.get(lat.name, 1.0) * rng.lognormal(0.0, 0.2)
        weights.append(amp * w)
    return np.array(weights).T  # (17, n_latent)


def synth_subject(seed: int, n_segments: int, cfg: SynthConfig = SynthConfig(),
                  subject_id: str | None = None) -> list[Segment]:
    """Deterministic synthetic subject: latent band-limited processes mixed by
    distance-decaying footprints plus channel noise, band-passed, scaled to
    channel RMS within ``cfg.rms_range`` uV and rounded to float32 precision."""
    montage = standard_montage()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EE6]))
    mix = _mixing(cfg, montage, rng)
    lo, hi = cfg.rms_range
    level = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo))
    jitter = rng.lognormal(0.0, cfg.channel_jitter, size=len(CHANNELS))
    sid = subject_id if subject_id is not None else f"S{int(seed):04d}"
    pad = int(cfg.fs)  # discarded edges absorb filter transients
    n_total = cfg.T + 2 * pad
    raw = []
    for _ in range(n_segments):
        state = rng.lognormal(0.0, cfg.state_var, size=len(cfg.latents))
        lat = np.array([_band_limited(rng, n_total, cfg.fs, l.band) for l in cfg.latents])
        x = mix @ (state[:, None] * lat)
        x = x + cfg.noise * np.sqrt(np.mean(x * x, axis=1, keepdims=True)) * rng.standard_normal(x.shape)
        raw.append(dsp.bandpass(x, cfg.fs, 0.5, min(45.0, 0.45 * cfg.fs))[:, pad:pad + cfg.T])
    # one subject-level gain puts the mean channel RMS at ``level``; the montage
    # pattern from the mixing survives, with mild per-channel jitter, clipped to range
    pooled = np.sqrt(np.mean([np.mean(r * r, axis=1) for r in raw], axis=0))
    rms = np.clip(pooled / pooled.mean() * level * jitter, lo, hi)
    gain = rms / np.maximum(pooled, 1e-12)
    segs = []
    for r in raw:
        y = (gain[:, None] * r).astype(np.float32).astype(np.float64)
        segs.append(Segment(sid, y[: len(SOURCES)], y[len(SOURCES):], cfg.fs))
    return segs


def synth_dataset(n_subjects: int, segments_per_subject: int, cfg: SynthConfig = SynthConfig(),
                  seed: int = 0) -> list[Segment]:
    segs = []
    for i in range(n_subjects):
        segs.extend(synth_subject(seed * 100003 + i, segments_per_subject, cfg, subject_id=f"S{i:03d}"))
    return segs


# --------------------------------------------------------------------------
# segment store: manifest.json + one little-endian float32 file per segment


def save_segments(path, segments: list[Segment]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not segments:
        raise ValueError("nothing to save")
    T, fs = segments[0].T, segments[0].fs
    entries = []
    for i, seg in enumerate(segments):
        if seg.T != T or seg.fs != fs:
            raise ValueError("all segments in a store must share T and fs")
        data = seg.all_rows().astype("<f4")
        name = f"seg_{i:05d}.f32"
        (path / name).write_bytes(np.ascontiguousarray(data).tobytes())
        entries.append({"file": name, "subject_id": seg.subject_id,
                        "has_targets": seg.targets is not None, "n_values": int(data.size)})
    manifest = {
        "version": STORE_VERSION, "fs": fs, "T": T,
        "sources": list(SOURCES), "targets": list(TARGETS),
        "subjects": sorted({s.subject_id for s in segments}),
        "segments": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_segments(path) -> list[Segment]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreError(f"cannot read manifest in {path}: {exc}") from exc
    try:
        version, fs, T, entries = manifest["version"], manifest["fs"], manifest["T"], manifest["segments"]
    except KeyError as exc:
        raise StoreError(f"manifest missing field {exc}") from exc
    if version != STORE_VERSION:
        raise StoreError(f"store version {version} unsupported (expected {STORE_VERSION})")
    if tuple(manifest.get("sources", ())) != SOURCES or tuple(manifest.get("targets", ())) != TARGETS:
        raise StoreError("store channel order does not match the montage")
    segs = []
    for e in entries:
        rows = len(CHANNELS) if e["has_targets"] else len(SOURCES)
        if e["n_values"] != rows * T:
            raise StoreError(f"{e['file']}: length field {e['n_values']} != {rows}x{T}")
        raw = (path / e["file"]).read_bytes()
        if len(raw) != 4 * e["n_values"]:
            raise StoreError(f"{e['file']}: payload has {len(raw)} bytes, expected {4 * e['n_values']}")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, T)
        tgt = data[len(SOURCES):] if e["has_targets"] else None
        segs.append(Segment(e["subject_id"], data[: len(SOURCES)], tgt, fs))
    return segs


def save_json(path, obj: dict):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
