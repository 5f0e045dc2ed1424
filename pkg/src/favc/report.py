"""Experiment orchestration: training from a config, clean evaluation, the
robustness grid, the PSD-weight sweep and figure emission.

Every CSV and SVG written here starts with a comment carrying the config hash
and seed, and all numbers are printed with a fixed format, so the same config
reproduces the same bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines, dsp, plots
from .dataset import (SOURCES, TARGETS, ChannelStats, Segment, Split, SynthConfig, compute_stats,
                      load_segments, save_json, save_segments, split_subjects, standard_montage, synth_dataset)
from .dsp import WelchConfig
from .model import ArchConfig, FAVCNet, load_checkpoint, save_checkpoint
from .objectives import CHANNEL_METRICS, DIRECTION, SEGMENT_METRICS, LossWeights, MetricReport, evaluate
from .perturb import CONDITIONS, PerturbSpec, perturb_sources
from .stats import wilcoxon_signed_rank, win_rate
from .trainer import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

MODEL = "favc"
COMPARATORS = ("nni", "idw", "spline")
METHODS = (MODEL,) + COMPARATORS
ROBUST_METRICS = ("lsd", "kl", "sci", "cftc")
SWEEP_METRICS = ("nmae", "pearson", "lsd", "kl", "sci", "cftc")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataMismatch(ConfigError):
    """Checkpoint and dataset disagree on channels, geometry or statistics."""


DEFAULT_SYNTH = {"n_subjects": 48, "segments_per_subject": 4, "fs": 128.0, "T": 256}


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    data: str | None = None
    synth: dict = field(default_factory=lambda: dict(DEFAULT_SYNTH))
    arch: str | dict = "toy"
    welch: dict | None = None
    train: dict = field(default_factory=dict)
    checkpoint: str | None = None
    conditions: list = field(default_factory=lambda: list(CONDITIONS))
    repeats: int = 3
    perturb: dict = field(default_factory=dict)
    w_psd: list = field(default_factory=lambda: [0.0, 0.1])
    threads: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if "synth" in d:
            cfg.synth = {**DEFAULT_SYNTH, **d["synth"]}
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def check(self):
        bad = [c for c in self.conditions if c not in CONDITIONS]
        if bad:
            raise ConfigError(f"unknown perturbation conditions {bad}")
        if self.repeats < 1 or self.threads < 1:
            raise ConfigError("repeats and threads must be at least 1")
        if not self.w_psd or any(not 0 <= w <= 1 for w in self.w_psd):
            raise ConfigError("w_psd entries must lie in [0, 1]")
        try:
            self.synth_config()
            self.arch_config()
            self.welch_config()
            self.train_config()
            PerturbSpec.from_dict(self.perturb)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def require_paths(self, checkpoint: bool = False):
        if self.data is not None and not (Path(self.data) / "manifest.json").is_file():
            raise ConfigError(f"dataset {self.data} has no manifest.json")
        if checkpoint and not self.checkpoint_path.is_file():
            raise ConfigError(f"checkpoint {self.checkpoint_path} does not exist")

    # resolved sub-configs ------------------------------------------------

    def synth_config(self) -> SynthConfig:
        extra = {k: v for k, v in self.synth.items() if k not in ("n_subjects", "segments_per_subject")}
        return SynthConfig.from_dict(extra)

    @property
    def fs(self) -> float:
        return float(self.synth_config().fs)

    @property
    def T(self) -> int:
        return int(self.synth_config().T)

    def arch_config(self, T: int | None = None) -> ArchConfig:
        T = T or self.T
        if self.arch == "toy":
            return ArchConfig.toy(T=T)
        if self.arch == "default":
            return replace(ArchConfig(), T=T)
        if isinstance(self.arch, dict):
            return ArchConfig.from_dict({**ArchConfig().to_dict(), **self.arch, "T": T})
        raise ConfigError(f"arch must be 'toy', 'default' or a dict, got {self.arch!r}")

    def welch_config(self, fs: float | None = None) -> WelchConfig:
        fs = fs or self.fs
        if self.welch is not None:
            return WelchConfig(**{"fs": fs, **self.welch})
        if fs == 500.0:
            return WelchConfig()
        # one-second Hann window with half overlap at any other rate
        n = int(round(fs))
        return WelchConfig(fs=fs, nwin=n, hop=n // 2)

    def train_config(self, w_psd: float | None = None) -> TrainConfig:
        tc = TrainConfig.from_dict({"seed": self.seed, **self.train})
        if w_psd is not None:
            tc = replace(tc, weights=LossWeights.with_psd(w_psd))
        return tc

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "model.ckpt"

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of everything that influences results (not the output location)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        d.pop("checkpoint")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def stamp(self) -> str:
        return f"favc config_hash={self.hash()} seed={self.seed}"


# --------------------------------------------------------------------------
# data plumbing


@dataclass
class DataBundle:
    segments: list[Segment]
    split: Split
    stats: ChannelStats

    def subset(self, which: str) -> tuple[list[int], list[Segment]]:
        ids = set(getattr(self.split, which))
        idx = [i for i, s in enumerate(self.segments) if s.subject_id in ids]
        return idx, [self.segments[i] for i in idx]


def load_data(cfg: ExperimentConfig, split: Split | None = None) -> DataBundle:
    """Segments from the configured store (or the synthetic generator), the
    seeded subject split and training-set channel statistics."""
    if cfg.data is not None:
        cfg.require_paths()
        segs = load_segments(cfg.data)
    else:
        n_sub = int(cfg.synth.get("n_subjects", DEFAULT_SYNTH["n_subjects"]))
        n_seg = int(cfg.synth.get("segments_per_subject", DEFAULT_SYNTH["segments_per_subject"]))
        segs = synth_dataset(n_sub, n_seg, cfg.synth_config(), seed=cfg.seed)
    if any(s.targets is None for s in segs):
        raise ConfigError("evaluation and training need segments with target rows")
    split = split or split_subjects({s.subject_id for s in segs}, cfg.seed)
    missing = set(split.train + split.val + split.test) - {s.subject_id for s in segs}
    if missing:
        raise DataMismatch(f"split names subjects absent from the data: {sorted(missing)[:5]}")
    train_segs = [s for s in segs if s.subject_id in set(split.train)]
    return DataBundle(segs, split, compute_stats(train_segs))


def data_fingerprint(segs: list[Segment]) -> dict:
    return {"fs": float(segs[0].fs), "T": int(segs[0].T), "sources": list(SOURCES),
            "targets": list(TARGETS)}


def _csv_text(stamp: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return v


def write_csv(path, stamp: str, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.write_text(_csv_text(stamp, header, rows))
    return path


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --------------------------------------------------------------------------
# training


def train_model(cfg: ExperimentConfig, bundle: DataBundle, w_psd: float | None = None,
                checkpoint_path=None, log_path=None) -> tuple[FAVCNet, TrainResult]:
    """Seeded model initialisation and training on the bundle's train/val split."""
    T = bundle.segments[0].T
    fs = bundle.segments[0].fs
    model = FAVCNet(cfg.arch_config(T), seed=cfg.seed)
    _, tr = bundle.subset("train")
    _, va = bundle.subset("val")
    tcfg = cfg.train_config(w_psd)
    result = train(model, tr, va, bundle.stats, cfg.welch_config(fs), tcfg,
                   checkpoint_path=None, log_path=log_path, header_comment=cfg.stamp())
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, bundle.stats, {
            "stamp": cfg.stamp(), "split": bundle.split.to_dict(),
            "data": data_fingerprint(bundle.segments), "train": tcfg.to_dict(),
            "welch": cfg.welch_config(fs).to_dict(), "best_epoch": result.best_epoch,
            "best_val": result.best_val, "steps": result.steps,
        })
    return model, result


def run_train(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_data(cfg)
    save_json(out / "split.json", bundle.split.to_dict())
    model, result = train_model(cfg, bundle, checkpoint_path=cfg.checkpoint_path,
                                log_path=out / "train_log.csv")
    return {"checkpoint": cfg.checkpoint_path, "log": out / "train_log.csv", "result": result}


# --------------------------------------------------------------------------
# clean evaluation


@dataclass
class EvalContext:
    model: FAVCNet | None
    bundle: DataBundle
    welch: WelchConfig
    index: list[int]
    test: list[Segment]

    @property
    def X(self) -> np.ndarray:
        return np.stack([s.sources for s in self.test])

    @property
    def Y(self) -> np.ndarray:
        return np.stack([s.targets for s in self.test])

    @property
    def subjects(self) -> list[str]:
        return [s.subject_id for s in self.test]


def load_eval_context(cfg: ExperimentConfig, with_model: bool = True) -> EvalContext:
    """Checkpoint plus the matching test split, with consistency checks between them."""
    if not with_model:
        bundle = load_data(cfg)
        idx, test = bundle.subset("test")
        return EvalContext(None, bundle, cfg.welch_config(bundle.segments[0].fs), idx, test)
    cfg.require_paths(checkpoint=True)
    model, ck_stats, meta = load_checkpoint(cfg.checkpoint_path)
    split = Split.from_dict(meta["split"]) if "split" in meta else None
    bundle = load_data(cfg, split)
    fp = data_fingerprint(bundle.segments)
    if "data" in meta and meta["data"] != fp:
        raise DataMismatch(f"checkpoint was trained on {meta['data']}, data is {fp}")
    if model.config.T != fp["T"]:
        raise DataMismatch(f"checkpoint expects T={model.config.T}, data has T={fp['T']}")
    if tuple(ck_stats.names) != tuple(bundle.stats.names) or not (
            np.allclose(ck_stats.mean, bundle.stats.mean, rtol=1e-9, atol=1e-9)
            and np.allclose(ck_stats.std, bundle.stats.std, rtol=1e-9, atol=1e-9)):
        raise DataMismatch("training-set channel statistics differ from the checkpoint's")
    idx, test = bundle.subset("test")
    welch = WelchConfig(**meta["welch"]) if "welch" in meta else cfg.welch_config(fp["fs"])
    return EvalContext(model, bundle, welch, idx, test)


def predict_all(ctx: EvalContext, X: np.ndarray) -> dict[str, np.ndarray]:
    montage = standard_montage()
    preds = {}
    if ctx.model is not None:
        preds[MODEL] = ctx.model.predict(X, ctx.bundle.stats)
    for name in COMPARATORS:
        preds[name] = baselines.BASELINES[name](X, montage)
    return preds


def evaluate_all(preds: dict, Y, sigma, welch: WelchConfig, subjects, threads: int = 1
                 ) -> dict[str, MetricReport]:
    """Metric reports per method; methods are fanned out over worker threads and
    collected in input order."""
    names = list(preds)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(lambda n: evaluate(preds[n], Y, sigma, welch, subjects), names))
    return dict(zip(names, reports))


def pooled_rows(reports: dict[str, MetricReport]) -> tuple[list[str], list[list]]:
    header = ["method", "n_subjects"]
    for m in SEGMENT_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    rows = []
    for name, rep in reports.items():
        s = rep.summary()
        row = [name, len(set(rep.subjects))]
        for m in SEGMENT_METRICS:
            row += [s[m][0], s[m][1]]
        rows.append(row)
    return header, rows


def channel_rows(reports: dict[str, MetricReport]) -> tuple[list[str], list[list]]:
    header = ["method", "channel"]
    for m in CHANNEL_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    rows = []
    for name, rep in reports.items():
        cs = rep.channel_summary()
        for c, ch in enumerate(TARGETS):
            row = [name, ch]
            for m in CHANNEL_METRICS:
                row += [cs[m][0][c], cs[m][1][c]]
            rows.append(row)
    return header, rows


def run_clean_eval(cfg: ExperimentConfig, ctx: EvalContext | None = None, prefix: str = "clean") -> dict:
    """Model and comparators on identical test segments; pooled and per-channel CSVs."""
    ctx = ctx or load_eval_context(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    X, Y = ctx.X, ctx.Y
    preds = predict_all(ctx, X)
    reports = evaluate_all(preds, Y, ctx.bundle.stats.target_std, ctx.welch, ctx.subjects, cfg.threads)
    h, rows = pooled_rows(reports)
    p1 = write_csv(out / f"{prefix}_pooled.csv", cfg.stamp(), h, rows)
    h, rows = channel_rows(reports)
    p2 = write_csv(out / f"{prefix}_channel.csv", cfg.stamp(), h, rows)
    return {"reports": reports, "preds": preds, "context": ctx, "files": [p1, p2]}


def run_baselines(cfg: ExperimentConfig) -> dict:
    """Comparators only; no checkpoint needed."""
    return run_clean_eval(cfg, load_eval_context(cfg, with_model=False), prefix="baseline")


# --------------------------------------------------------------------------
# robustness grid


def rank_methods(means: dict[str, float], direction: int) -> dict[str, int]:
    """Rank 1 is the best mean under ``direction``; ties keep method order."""
    names = list(means)
    key = [(-direction * means[n], i) for i, n in enumerate(names)]
    order = sorted(range(len(names)), key=lambda i: key[i])
    return {names[i]: r + 1 for r, i in enumerate(order)}


def _subject_values(rep: MetricReport, metric: str) -> np.ndarray:
    return rep.subject_level(metric)[1]


def run_robustness(cfg: ExperimentConfig, ctx: EvalContext | None = None) -> dict:
    """Condition x repeat grid; per-subject aggregation, ranks and a Wilcoxon
    test of the model against the best comparator for each condition and metric."""
    ctx = ctx or load_eval_context(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    X, Y = ctx.X, ctx.Y
    fs = ctx.test[0].fs
    sigma = ctx.bundle.stats.target_std
    grid: dict[str, dict[str, dict[str, np.ndarray]]] = {}
    for cond in cfg.conditions:
        spec = PerturbSpec.from_dict({**cfg.perturb, "condition": cond})
        # the clean condition is deterministic, so one pass stands in for every repeat
        n_rep = 1 if cond == "clean" else cfg.repeats
        per = {m: {k: [] for k in ROBUST_METRICS} for m in METHODS if ctx.model or m != MODEL}
        for r in range(n_rep):
            Xp = X if cond == "clean" else perturb_sources(X, fs, spec, cfg.seed, r, ctx.index)
            reps = evaluate_all(predict_all(ctx, Xp), Y, sigma, ctx.welch, ctx.subjects, cfg.threads)
            for m, rep in reps.items():
                for k in ROBUST_METRICS:
                    per[m][k].append(_subject_values(rep, k))
        grid[cond] = {m: {k: np.array(v) for k, v in d.items()} for m, d in per.items()}

    methods = list(next(iter(grid.values())))
    header = ["condition", "metric", "direction"]
    for m in methods:
        header += [f"{m}_mean", f"{m}_std", f"{m}_repeat_std", f"{m}_rank"]
    header += ["comparator", "wilcoxon_stat", "wilcoxon_p", "win_rate", "n_subjects", "repeats"]
    rows = []
    summary = {}
    skipped: list[str] = []
    for cond, per in grid.items():
        for k in ROBUST_METRICS:
            d = DIRECTION[k]
            subj = {m: per[m][k].mean(axis=0) for m in methods}  # (n_subjects,)
            means = {m: float(subj[m].mean()) for m in methods}
            ranks = rank_methods(means, d)
            row = [cond, k, "up" if d > 0 else "down"]
            for m in methods:
                reps_means = per[m][k].mean(axis=1)
                row += [means[m], float(subj[m].std(ddof=1)) if subj[m].size > 1 else 0.0,
                        float(reps_means.std(ddof=1)) if reps_means.size > 1 else 0.0, ranks[m]]
            if MODEL in methods:
                comp = min((m for m in methods if m != MODEL), key=lambda m: ranks[m])
                try:
                    w = wilcoxon_signed_rank(subj[MODEL], subj[comp])
                    stat, p = w.statistic, w.pvalue
                except ValueError as exc:
                    skipped.append(f"{cond}/{k}: {exc}")
                    stat, p = float("nan"), float("nan")
                row += [comp, stat, p, win_rate(subj[MODEL], subj[comp], d)]
            else:
                row += ["", float("nan"), float("nan"), float("nan")]
            row += [int(subj[methods[0]].size), int(per[methods[0]][k].shape[0])]
            rows.append(row)
            summary[(cond, k)] = dict(zip(header, row))
    if skipped:
        log.warning("wilcoxon left blank for %d rows (first: %s)", len(skipped), skipped[0])
    files = [write_csv(out / "robustness.csv", cfg.stamp(), header, rows)]
    for cond, per in grid.items():
        series = {m: [float(per[m][k].mean(axis=0).mean()) for k in ROBUST_METRICS] for m in methods}
        errs = {m: [float(per[m][k].mean(axis=0).std(ddof=1)) if per[m][k].shape[1] > 1 else 0.0
                    for k in ROBUST_METRICS] for m in methods}
        svg = plots.bar_chart(list(ROBUST_METRICS), series, errs, title=f"condition: {cond}",
                              meta=cfg.stamp())
        p = out / f"robust_{cond}.svg"
        p.write_text(svg)
        files.append(p)
    return {"rows": summary, "grid": grid, "files": files}


# --------------------------------------------------------------------------
# PSD-weight sweep


def run_sweep(cfg: ExperimentConfig, weights=None) -> dict:
    """One seeded training run per PSD weight, each evaluated on the test split."""
    weights = list(weights if weights is not None else cfg.w_psd)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_data(cfg)
    _, test = bundle.subset("test")
    X = np.stack([s.sources for s in test])
    Y = np.stack([s.targets for s in test])
    subjects = [s.subject_id for s in test]
    welch = cfg.welch_config(test[0].fs)
    rows, results = [], {}
    for w in weights:
        model, res = train_model(cfg, bundle, w_psd=w)
        rep = evaluate(model.predict(X, bundle.stats), Y, bundle.stats.target_std, welch, subjects)
        s = rep.summary()
        results[w] = {"report": rep, "train": res, "summary": s}
        rows.append([w] + [s[m][0] for m in SWEEP_METRICS] + [res.best_epoch, res.steps])
    header = ["w_psd"] + list(SWEEP_METRICS) + ["best_epoch", "steps"]
    f1 = write_csv(out / "sweep.csv", cfg.stamp(), header, rows)
    svg = plots.line_chart(weights, {m: [results[w]["summary"][m][0] for w in weights]
                                     for m in ("nmae", "lsd", "kl")},
                           title="PSD-weight sweep", xlabel="w_psd", meta=cfg.stamp())
    f2 = out / "sweep.svg"
    f2.write_text(svg)
    return {"results": results, "files": [f1, f2]}


# --------------------------------------------------------------------------
# figures


def emit_plots(cfg: ExperimentConfig, clean: dict) -> list[Path]:
    """Waveform overlay, log-PSD heatmaps and bandpower scalp maps from a clean evaluation."""
    out = Path(cfg.out)
    ctx: EvalContext = clean["context"]
    preds = clean["preds"]
    Y = ctx.Y
    welch = ctx.welch
    fs = ctx.test[0].fs
    first = preds[MODEL] if MODEL in preds else next(iter(preds.values()))
    files = []
    p = out / "overlay.svg"
    p.write_text(plots.waveform_overlay(Y[0], first[0], TARGETS, fs, meta=cfg.stamp()))
    files.append(p)
    spectra = {"recorded": dsp.welch_psd(Y, welch)}
    spectra.update({k: dsp.welch_psd(v, welch) for k, v in preds.items()})
    heat = {k: np.log10(S.mean(axis=0) + dsp.EPS) for k, S in spectra.items()}
    p = out / "heatmap.svg"
    p.write_text(plots.heatmap_panels(heat, welch.freqs, TARGETS, meta=cfg.stamp()))
    files.append(p)
    power = {k: np.log10(S.mean(axis=0).sum(axis=-1) * welch.df + dsp.EPS) for k, S in spectra.items()}
    p = out / "topomap.svg"
    p.write_text(plots.topomaps(power, standard_montage().target_xy, TARGETS, meta=cfg.stamp()))
    files.append(p)
    return files


def run_report(cfg: ExperimentConfig) -> dict:
    clean = run_clean_eval(cfg)
    clean["files"] += emit_plots(cfg, clean)
    return clean


def run_synth(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    n_sub = int(cfg.synth["n_subjects"])
    n_seg = int(cfg.synth["segments_per_subject"])
    segs = synth_dataset(n_sub, n_seg, cfg.synth_config(), seed=cfg.seed)
    path = save_segments(out / "data", segs)
    save_json(path / "synth.json", {"stamp": cfg.stamp(), "synth": cfg.synth})
    return {"data": path, "n_segments": len(segs)}
