"""FAVC-Net: a shared multi-scale source encoder, state-driven target attention
refined by GATv2 over the virtual targets, signed source-block mixing,
attention-consistent skips and a shared transposed-convolution decoder."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as tc
from .dataset import ChannelStats, Montage, standard_montage
from .tensor import EPS, ParameterSet, Tensor

CHECKPOINT_VERSION = 1
_MAGIC = b"FAVCCKPT"


@dataclass(frozen=True)
class ArchConfig:
    T: int = 3000
    stage_widths: tuple[int, ...] = (32, 64, 128, 256)
    kernels: tuple[int, ...] = (3, 5, 9)
    n_blocks: int = 32
    embed_dim: int = 32
    embed_hidden: int = 32
    attn_hidden: int = 96
    gat_dim: int = 64
    n_neighbors: int = 4
    tau_p: float | None = None
    lambda_g_init: float = 1.0
    decoder_widths: tuple[int, ...] = (128, 64, 32)
    dec_kernel: int = 4
    n_sources: int = 4
    n_targets: int = 13

    def __post_init__(self):
        C = self.stage_widths[-1]
        if C % self.n_blocks:
            raise ValueError(f"final width {C} not divisible by {self.n_blocks} blocks")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("encoder kernel lengths must be odd")
        if len(self.decoder_widths) != len(self.stage_widths) - 1:
            raise ValueError("need one decoder width per encoder stage except the deepest")
        dims = (*self.stage_widths, *self.decoder_widths, self.n_blocks, self.embed_dim,
                self.embed_hidden, self.attn_hidden, self.gat_dim, self.n_neighbors)
        if min(dims) <= 0:
            raise ValueError("all dimensions must be positive")
        if self.T < 2 ** len(self.stage_widths):
            raise ValueError(f"T={self.T} cannot survive {len(self.stage_widths)} halvings")
        if self.n_neighbors >= self.n_targets:
            raise ValueError("n_neighbors must leave at least one non-neighbor")

    @property
    def C(self) -> int:
        return self.stage_widths[-1]

    def encoder_lengths(self) -> list[int]:
        lens, L = [], self.T
        for _ in self.stage_widths:
            L = (L - 1) // 2 + 1
            lens.append(L)
        return lens

    @classmethod
    def toy(cls, T: int = 256, factor: int = 8) -> "ArchConfig":
        """Every width divided by ``factor``; 8-channel latent blocks kept."""
        base = cls()
        d = lambda v: max(1, v // factor)
        widths = tuple(d(w) for w in base.stage_widths)
        return replace(
            base, T=T, stage_widths=widths, n_blocks=max(1, widths[-1] // 8),
            embed_dim=d(base.embed_dim), embed_hidden=d(base.embed_hidden),
            attn_hidden=d(base.attn_hidden), gat_dim=d(base.gat_dim),
            decoder_widths=tuple(d(w) for w in base.decoder_widths),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        for k in ("stage_widths", "kernels", "decoder_widths"):
            d[k] = tuple(d[k])
        return cls(**d)


# --------------------------------------------------------------------------
# spatial prior and attention helpers


def default_tau(xy: np.ndarray) -> float:
    """Lower median of pairwise squared distances over ln 2 (that pair gets prior 0.5)."""
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    iu = np.triu_indices(len(xy), 1)
    vals = np.sort(d2[iu])
    return float(vals[(len(vals) - 1) // 2] / np.log(2.0))


def spatial_prior(xy: np.ndarray, tau: float | None = None, k: int = 4):
    """Gaussian prior P_tu over target coordinates and top-k neighbor sets (self excluded)."""
    xy = np.asarray(xy, dtype=np.float64)
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    off = d2[~np.eye(len(xy), dtype=bool)]
    if np.any(off < 1e-12):
        raise ValueError("degenerate montage: coincident electrodes")
    tau = default_tau(xy) if tau is None else tau
    if tau <= 0:
        raise ValueError("tau_p must be positive")
    P = np.exp(-d2 / tau)
    masked = np.where(np.eye(len(xy), dtype=bool), -np.inf, P)
    nbr = np.argsort(-masked, axis=1, kind="stable")[:, :k]
    return P, nbr, tau


def signed_normalize(a, axis: int = -2) -> Tensor:
    """Divide each source column by its L1 mass (+eps); signs survive."""
    return tc.div(a, tc.add(tc.sum_(tc.abs_(a), axis=axis, keepdims=True), EPS))


def block_map(C: int, B: int) -> np.ndarray:
    return np.arange(C) // (C // B)


def aggregate(a_tilde, h, n_blocks: int) -> Tensor:
    """h~_{t,k,:} = sum_i a~_{t,i,b(k)} h_{i,k,:}.

    a_tilde: (n, targets, sources, B); h: (n, sources, C, L) -> (n, targets, C, L).
    """
    C = h.shape[-2]
    per_channel = tc.getitem(a_tilde, (Ellipsis, block_map(C, n_blocks)))
    return tc.einsum("ntic,nicl->ntcl", per_channel, h)


# --------------------------------------------------------------------------


class FAVCNet:
    def __init__(self, config: ArchConfig = ArchConfig(), montage: Montage | None = None, seed: int = 0):
        self.config = config
        self.montage = montage or standard_montage()
        self.P, self.neighbors, self.tau = spatial_prior(
            self.montage.target_xy, config.tau_p, config.n_neighbors)
        self.log_prior_nbr = np.log(np.take_along_axis(self.P, self.neighbors, axis=1) + EPS)
        self.params = ParameterSet()
        self.buffers: dict[str, np.ndarray] = {}
        self._build(np.random.default_rng(seed))

    # ---- parameters

    def _uniform(self, rng, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _bn(self, name, width, rng):
        self.params.add(f"{name}.gamma", np.ones(width))
        self.params.add(f"{name}.beta", np.zeros(width))
        self.buffers[f"{name}.mean"] = np.zeros(width)
        self.buffers[f"{name}.var"] = np.ones(width)

    def _build(self, rng):
        cfg, p = self.config, self.params
        c_in = 1
        for s, width in enumerate(cfg.stage_widths):
            for k in cfg.kernels:
                p.add(f"enc.s{s}.k{k}", self._uniform(rng, (width, c_in, k), c_in * k))
            self._bn(f"enc.s{s}.bn", width, rng)
            c_in = width
        C, E, H = cfg.C, cfg.embed_dim, cfg.embed_hidden
        p.add("emb.W1", self._uniform(rng, (H, 4 * C), 4 * C))
        p.add("emb.b1", self._uniform(rng, (H,), 4 * C))
        self._bn("emb.bn", H, rng)
        p.add("emb.W2", self._uniform(rng, (E, H), H))
        p.add("emb.b2", self._uniform(rng, (E,), H))
        p.add("emb.ln.gamma", np.ones(E))
        p.add("emb.ln.beta", np.zeros(E))
        S, NT, Dh, B = cfg.n_sources, cfg.n_targets, cfg.attn_hidden, cfg.n_blocks
        D = S * B
        p.add("att.W1", self._uniform(rng, (NT, Dh, S * E), S * E))
        p.add("att.b1", self._uniform(rng, (NT, Dh), S * E), decay=False)
        p.add("att.W2", self._uniform(rng, (D, Dh), Dh))
        p.add("att.b2", self._uniform(rng, (D,), Dh))
        G = cfg.gat_dim
        p.add("gat.Ws", self._uniform(rng, (G, D), D))
        p.add("gat.Wu", self._uniform(rng, (G, D), D))
        p.add("gat.bg", np.zeros(G))
        p.add("gat.ag", self._uniform(rng, (G,), G), decay=False)
        p.add("gat.Wm", self._uniform(rng, (D, D), D))
        p.add("gat.Wgam", self._uniform(rng, (D, 2 * D), 2 * D))
        p.add("gat.bgam", np.zeros(D))
        p.add("gat.lambda", np.array(cfg.lambda_g_init), decay=False)
        p.add("dec.adapter.W", self._uniform(rng, (C, C, 1), C))
        p.add("dec.adapter.b", self._uniform(rng, (C,), C))
        widths = (C, *cfg.decoder_widths, 1)
        n_stages = len(cfg.stage_widths)
        K = cfg.dec_kernel
        for j in range(n_stages):
            cin, cout = widths[j], widths[j + 1]
            p.add(f"dec.up{j}.W", self._uniform(rng, (cin, cout, K), cin * K))
            if j < n_stages - 1:
                self._bn(f"dec.up{j}.bn", cout, rng)
                cskip = cfg.stage_widths[n_stages - 2 - j]
                p.add(f"dec.skip{j}.W", self._uniform(rng, (cout, cskip, 1), cskip))
                p.add(f"dec.skip{j}.b", self._uniform(rng, (cout,), cskip))
            else:
                p.add(f"dec.up{j}.b", self._uniform(rng, (cout,), cin * K))
        p.add("dec.proj.W", self._uniform(rng, (1, 1, 1), 1))
        p.add("dec.proj.b", np.zeros(1))

    def param_count(self) -> int:
        return self.params.count()

    def _bn_apply(self, x, name, training):
        p = self.params
        return tc.batchnorm1d(x, p[f"{name}.gamma"], p[f"{name}.beta"],
                              self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"], training)

    # ---- stages

    def encode(self, x, training: bool = False):
        """x: (N, 1, T) -> deep features (N, C, L), per-stage features, state descriptor (N, 4C)."""
        p, cfg = self.params, self.config
        h = tc.as_tensor(x)
        stages = []
        for s in range(len(cfg.stage_widths)):
            branches = [tc.conv1d(h, p[f"enc.s{s}.k{k}"], stride=2, pad=k // 2) for k in cfg.kernels]
            z = branches[0]
            for b in branches[1:]:
                z = z + b
            h = tc.elu(self._bn_apply(z, f"enc.s{s}.bn", training))
            stages.append(h)
        state = tc.concat([tc.mean(h, axis=-1), tc.std(h, axis=-1),
                           tc.max_(h, axis=-1), tc.min_(h, axis=-1)], axis=-1)
        return h, stages, state

    def embed_state(self, s, training: bool = False) -> Tensor:
        p = self.params
        hid = tc.linear(s, p["emb.W1"], p["emb.b1"])
        hid = tc.elu(self._bn_apply(hid, "emb.bn", training))
        out = tc.linear(hid, p["emb.W2"], p["emb.b2"])
        return tc.layernorm(out, p["emb.ln.gamma"], p["emb.ln.beta"])

    def target_attention(self, E_s, targets=None) -> Tensor:
        """E_s: (n, 4E) -> raw source-by-block scores (n, targets, 4, B)."""
        p, cfg = self.params, self.config
        W1, b1 = p["att.W1"], p["att.b1"]
        if targets is not None:
            targets = np.atleast_1d(targets)
            if np.any((targets < 0) | (targets >= cfg.n_targets)):
                raise IndexError(f"target index out of range 0..{cfg.n_targets - 1}")
            W1, b1 = tc.getitem(W1, targets), tc.getitem(b1, targets)
        hid = tc.add(tc.einsum("ne,the->nth", E_s, W1), b1)
        hid = tc.elu(hid)
        A = tc.linear(hid, p["att.W2"], p["att.b2"])
        n, nt = A.shape[:2]
        return tc.reshape(A, (n, nt, cfg.n_sources, cfg.n_blocks))

    def gatv2_refine(self, z, gate_override: float | None = None):
        """z: (n, 13, D) -> refined z and the neighbor attention (n, 13, k)."""
        p = self.params
        nbr = self.neighbors
        ws = tc.linear(z, p["gat.Ws"])
        wu = tc.linear(z, p["gat.Wu"])
        n, nt, G = ws.shape
        pre = tc.reshape(ws, (n, nt, 1, G)) + tc.getitem(wu, (slice(None), nbr)) + p["gat.bg"]
        logits = tc.einsum("ntkg,g->ntk", tc.leaky_relu(pre, 0.2), p["gat.ag"])
        logits = logits + tc.mul(p["gat.lambda"], self.log_prior_nbr)
        alpha = tc.softmax(logits, axis=-1)
        wm = tc.getitem(tc.linear(z, p["gat.Wm"]), (slice(None), nbr))
        msg = tc.einsum("ntk,ntkd->ntd", alpha, wm)
        if gate_override is None:
            gate = tc.sigmoid(tc.linear(tc.concat([z, msg], axis=-1), p["gat.Wgam"], p["gat.bgam"]))
        else:
            gate = Tensor(np.full(msg.shape, gate_override))
        return z + gate * msg, alpha

    def decode(self, h_mix, stages, u, training: bool = False) -> Tensor:
        """h_mix: (n, 13, C, L); stages: encoder features (n*4, c, l); u: (n, 13, 4)."""
        p, cfg = self.params, self.config
        n, nt, C, L = h_mix.shape
        S = cfg.n_sources
        x = tc.reshape(h_mix, (n * nt, C, L))
        x = tc.conv1d(x, p["dec.adapter.W"], bias=p["dec.adapter.b"])
        lens = cfg.encoder_lengths()
        n_stages = len(cfg.stage_widths)
        for j in range(n_stages):
            last = j == n_stages - 1
            out_len = cfg.T if last else lens[n_stages - 2 - j]
            x = tc.conv_transpose1d(x, p[f"dec.up{j}.W"], stride=2, pad=(cfg.dec_kernel - 2) // 2,
                                    crop_to=out_len, bias=p[f"dec.up{j}.b"] if last else None)
            if x.shape[-1] != out_len:
                raise tc.ShapeError(f"decoder stage {j}: length {x.shape[-1]} != {out_len}")
            if last:
                break
            feat = stages[n_stages - 2 - j]
            c, l = feat.shape[1:]
            skip = tc.einsum("nti,nicl->ntcl", u, tc.reshape(feat, (n, S, c, l)))
            skip = tc.conv1d(tc.reshape(skip, (n * nt, c, l)), p[f"dec.skip{j}.W"],
                             bias=p[f"dec.skip{j}.b"])
            x = tc.elu(self._bn_apply(x + skip, f"dec.up{j}.bn", training))
        x = tc.conv1d(x, p["dec.proj.W"], bias=p["dec.proj.b"])
        return tc.reshape(x, (n, nt, cfg.T))

    def forward(self, X, training: bool = False, return_state: bool = False):
        """Normalized sources (n, 4, T) or (4, T) -> normalized targets (n, 13, T)."""
        cfg = self.config
        X = np.asarray(X.data if isinstance(X, Tensor) else X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.ndim != 3 or X.shape[1] != cfg.n_sources or X.shape[2] != cfg.T:
            raise tc.ShapeError(f"expected (n, {cfg.n_sources}, {cfg.T}) sources, got {X.shape}")
        n, S = X.shape[:2]
        h, stages, state = self.encode(X.reshape(n * S, 1, cfg.T), training)
        e = self.embed_state(state, training)
        E_s = tc.reshape(e, (n, S * cfg.embed_dim))
        A = self.target_attention(E_s)
        z = tc.reshape(A, (n, cfg.n_targets, S * cfg.n_blocks))
        z_ref, alpha = self.gatv2_refine(z)
        a_ref = tc.reshape(z_ref, (n, cfg.n_targets, S, cfg.n_blocks))
        a_tilde = signed_normalize(a_ref, axis=-2)
        u = tc.mean(tc.abs_(a_tilde), axis=-1)
        C, L = h.shape[1:]
        h_mix = aggregate(a_tilde, tc.reshape(h, (n, S, C, L)), cfg.n_blocks)
        y = self.decode(h_mix, stages, u, training)
        if single:
            y = tc.getitem(y, 0)
        if return_state:
            return y, {"A": A, "z": z, "z_ref": z_ref, "alpha": alpha, "a_tilde": a_tilde,
                       "u": u, "h": h, "state": state, "embed": e}
        return y

    __call__ = forward

    def predict(self, sources_raw: np.ndarray, stats: ChannelStats, batch: int = 16) -> np.ndarray:
        """Raw-uV sources (n, 4, T) -> raw-uV targets (n, 13, T) in eval mode."""
        sources_raw = np.asarray(sources_raw, dtype=np.float64)
        xs = (sources_raw - stats.source_mean[:, None]) / stats.source_std[:, None]
        out = []
        for i in range(0, len(xs), batch):
            out.append(self.forward(xs[i:i + batch], training=False).data)
        y = np.concatenate(out, axis=0)
        return y * stats.target_std[:, None] + stats.target_mean[:, None]


def param_count(config: ArchConfig) -> int:
    return FAVCNet(config).param_count()


# --------------------------------------------------------------------------
# checkpoint: magic, u64 header length, JSON header, float64 LE blob


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: FAVCNet, stats: ChannelStats, meta: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": model.config.to_dict(),
        "stats": stats.to_dict(),
        "montage": model.montage.fingerprint(),
        "params": [[name, list(t.shape)] for name, t in model.params.items()],
        "buffers": [[name, list(b.shape)] for name, b in model.buffers.items()],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in model.params.values())
    blob += b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in model.buffers.values())
    path.write_bytes(_MAGIC + struct.pack("<Q", len(hb)) + hb + blob)
    return path


def load_checkpoint(path) -> tuple[FAVCNet, ChannelStats, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointError("not a FAVC checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} unsupported")
    model = FAVCNet(ArchConfig.from_dict(header["arch"]))
    if header["montage"] != model.montage.fingerprint():
        raise CheckpointError("montage fingerprint mismatch")
    expected = [[n, list(t.shape)] for n, t in model.params.items()]
    expected_b = [[n, list(b.shape)] for n, b in model.buffers.items()]
    if header["params"] != expected or header["buffers"] != expected_b:
        raise CheckpointError("parameter table does not match the architecture config")
    flat = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    total = sum(t.size for t in model.params.values()) + sum(b.size for b in model.buffers.values())
    if flat.size != total:
        raise CheckpointError(f"blob holds {flat.size} values, expected {total}")
    off = 0
    for t in model.params.values():
        t.data = flat[off:off + t.size].reshape(t.shape).astype(np.float64)
        off += t.size
    for name, b in model.buffers.items():
        model.buffers[name] = flat[off:off + b.size].reshape(b.shape).astype(np.float64)
        off += b.size
    return model, ChannelStats.from_dict(header["stats"]), header["meta"]


def checkpoint_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
