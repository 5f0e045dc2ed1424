"""AdamW optimization loop with global-norm clipping, plateau LR decay and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as tc
from .dataset import ChannelStats, Segment
from .dsp import WelchConfig
from .model import FAVCNet, save_checkpoint
from .objectives import LossWeights, evaluate, total_loss

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_threshold: float = 1e-6
    early_stop_patience: int = 15
    max_epochs: int = 100
    max_steps: int | None = None
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if min(self.batch_size, self.lr, self.clip_norm, self.max_epochs) <= 0:
            raise ValueError("batch_size, lr, clip_norm and max_epochs must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads, max_norm: float = 1.0):
    """Rescale all gradients together when their joint L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        return [g * s for g in grads], norm
    return list(grads), norm


class AdamW:
    """Adam with decoupled weight decay; decay applies only to flagged parameters."""

    def __init__(self, params, lr=1e-4, weight_decay=1e-5, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params.values()]
        self.v = [np.zeros_like(p.data) for p in params.values()]

    def step(self, grads):
        if len(grads) != len(self.m):
            raise ValueError("gradient list does not match the parameter set")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        for i, (name, p) in enumerate(self.params.items()):
            g = grads[i]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
            if self.params.decay[name] and self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


class Plateau:
    """Tracks validation losses; halves LR after ``patience`` stale validations and
    signals a stop after ``stop_patience`` stale validations since the best."""

    def __init__(self, factor=0.5, patience=5, stop_patience=15, threshold=1e-6):
        self.factor, self.patience = factor, patience
        self.stop_patience, self.threshold = stop_patience, threshold
        self.best = np.inf
        self.best_index = -1
        self.bad = 0
        self.since_best = 0
        self.history: list[float] = []

    def update(self, value: float, lr: float) -> tuple[float, bool]:
        self.history.append(value)
        improved = not np.isfinite(self.best) or value < self.best - abs(self.best) * self.threshold
        if improved:
            self.best = value
            self.best_index = len(self.history) - 1
            self.bad = 0
            self.since_best = 0
        else:
            self.bad += 1
            self.since_best += 1
        if self.bad >= self.patience:
            lr *= self.factor
            self.bad = 0
        return lr, self.since_best >= self.stop_patience


def plateau_schedule(history, lr: float, factor=0.5, patience=5, stop_patience=15,
                     threshold=1e-6) -> tuple[float, bool]:
    """Replay a validation history; returns (final lr, stop flag)."""
    sched = Plateau(factor, patience, stop_patience, threshold)
    stop = False
    for v in history:
        lr, stop = sched.update(v, lr)
    return lr, stop


@dataclass
class TrainResult:
    history: list[dict]
    best_val: float
    best_epoch: int
    steps: int
    initial_loss: float
    final_loss: float


def _batch_arrays(segs, stats: ChannelStats):
    X = np.stack([s.sources for s in segs])
    Y = np.stack([s.targets for s in segs])
    Xn = (X - stats.source_mean[:, None]) / stats.source_std[:, None]
    return Xn, Y


def _denorm(y_hat, stats: ChannelStats):
    return tc.add(tc.mul(y_hat, stats.target_std[:, None]), stats.target_mean[:, None])


def train_step(model: FAVCNet, Xn, Y, stats: ChannelStats, welch: WelchConfig, cfg: TrainConfig,
               opt: AdamW) -> dict:
    with tc.Tape() as tape:
        y_hat = _denorm(model.forward(Xn, training=True), stats)
        loss, parts = total_loss(y_hat, Y, stats.target_std, welch, cfg.weights)
    if not np.isfinite(loss.data):
        raise NonFiniteLoss(f"non-finite training loss at step {opt.step_count}: {parts}")
    grads = tc.backward(tape, loss, model.params)
    grads, norm = clip_global_norm(grads, cfg.clip_norm)
    opt.step(grads)
    parts["grad_norm"] = norm
    return parts


def validate(model: FAVCNet, segs, stats: ChannelStats, welch: WelchConfig, cfg: TrainConfig,
             batch: int = 16) -> dict:
    """Eval-mode loss and metrics. Runs outside any tape, so nothing here can feed a gradient."""
    if tc._active_tape() is not None:
        raise RuntimeError("validation must not run under a gradient tape")
    preds, totals, waves, psds, ns = [], 0.0, 0.0, 0.0, 0
    for i in range(0, len(segs), batch):
        Xn, Y = _batch_arrays(segs[i:i + batch], stats)
        y_hat = _denorm(model.forward(Xn, training=False), stats)
        _, parts = total_loss(y_hat, Y, stats.target_std, welch, cfg.weights)
        k = len(Xn)
        totals += parts["total"] * k
        waves += parts["wave"] * k
        psds += parts["psd"] * k
        ns += k
        preds.append(y_hat.data)
    rep = evaluate(np.concatenate(preds), np.stack([s.targets for s in segs]), stats.target_std, welch,
                   [s.subject_id for s in segs])
    return {"total": totals / ns, "wave": waves / ns, "psd": psds / ns,
            "nmae": float(rep.segment["nmae"].mean()), "lsd": float(rep.segment["lsd"].mean()),
            "kl": float(rep.segment["kl"].mean())}


LOG_FIELDS = ("epoch", "step", "lr", "train_total", "train_wave", "train_psd",
              "val_total", "val_wave", "val_psd", "val_nmae", "val_lsd", "val_kl")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def write_log(path, history: list[dict], header_comment: str | None = None):
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append(",".join(LOG_FIELDS))
    for row in history:
        lines.append(",".join(_fmt(row.get(k, float("nan"))) for k in LOG_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def train(model: FAVCNet, train_segs: list[Segment], val_segs: list[Segment] | None,
          stats: ChannelStats, welch: WelchConfig, cfg: TrainConfig = TrainConfig(),
          checkpoint_path=None, log_path=None, header_comment: str | None = None) -> TrainResult:
    """Shuffled mini-batch training; the best-validation snapshot is restored at the end.

    Without validation segments every epoch counts as an improvement and the
    final parameters are kept.
    """
    if not train_segs:
        raise ValueError("no training segments")
    if val_segs:
        overlap = {s.subject_id for s in train_segs} & {s.subject_id for s in val_segs}
        if overlap:
            raise ValueError(f"subjects in both train and validation: {sorted(overlap)}")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params, cfg.lr, cfg.weight_decay, cfg.betas, cfg.adam_eps)
    sched = Plateau(cfg.plateau_factor, cfg.plateau_patience, cfg.early_stop_patience,
                    cfg.plateau_threshold)
    history: list[dict] = []
    best = (np.inf, -1, None)
    initial = None
    last = None
    steps = 0
    done = False
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_segs))
        sums = {"total": 0.0, "wave": 0.0, "psd": 0.0}
        nb = 0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_segs[j] for j in order[i:i + cfg.batch_size]]
            Xn, Y = _batch_arrays(batch, stats)
            parts = train_step(model, Xn, Y, stats, welch, cfg, opt)
            if initial is None:
                initial = parts["total"]
            last = parts["total"]
            for k in sums:
                sums[k] += parts[k]
            nb += 1
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                done = True
                break
        row = {"epoch": epoch, "step": steps, "lr": opt.lr, "train_total": sums["total"] / nb,
               "train_wave": sums["wave"] / nb, "train_psd": sums["psd"] / nb}
        if val_segs:
            v = validate(model, val_segs, stats, welch, cfg)
            row.update({f"val_{k}": v[k] for k in ("total", "wave", "psd", "nmae", "lsd", "kl")})
            score = v["total"]
        else:
            score = row["train_total"]
        history.append(row)
        if score < best[0]:
            best = (score, epoch, (model.params.snapshot(), {k: b.copy() for k, b in model.buffers.items()}))
        log.info("epoch %d step %d lr %.3g train %.5f val %.5f", epoch, steps, opt.lr,
                 row["train_total"], row.get("val_total", float("nan")))
        opt.lr, stop = sched.update(score, opt.lr)
        if done or (val_segs and stop):
            break
    if best[2] is not None and val_segs:
        model.params.load(best[2][0])
        model.buffers.update(best[2][1])
    if log_path is not None:
        write_log(log_path, history, header_comment)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, stats,
                        {"step": steps, "best_val": float(best[0]), "best_epoch": int(best[1]),
                         "train": cfg.to_dict(), "welch": welch.to_dict()})
    return TrainResult(history, float(best[0]), int(best[1]), steps, float(initial), float(last))
