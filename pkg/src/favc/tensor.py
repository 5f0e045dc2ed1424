"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Only the primitives the generator and its spectral loss need are provided.
Operations record themselves on the active :class:`Tape` (entered with a
``with`` block); outside a tape every op is a plain numpy computation.

    >>> w = Tensor([2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = log(w * w)
    >>> grads = tape.backward(y.sum())
    >>> float(grads[w][0])  # doctest: +ELLIPSIS
    0.99999...
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS = 1e-8
NORM_EPS = 1e-5

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 value grid with an optional handle on the active tape."""

    __slots__ = ("data", "requires_grad", "node_id", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of operations; append order is topological order.

    Each node is ``(kind, inputs, vjp)``. Leaves (tensors that require a
    gradient but were not produced on this tape) get a node the first time
    they feed an op.
    """

    def __init__(self):
        self.nodes: list[tuple[str, tuple, Callable | None]] = []
        self._tensors: list[Tensor] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def _node_of(self, t: Tensor) -> int:
        nid = t.node_id
        if nid is not None and nid < len(self._tensors) and self._tensors[nid] is t:
            return nid
        key = id(t)
        if key in self._leaf_ids:
            return self._leaf_ids[key]
        nid = len(self.nodes)
        self.nodes.append(("leaf", (), None))
        self._tensors.append(t)
        self._leaf_ids[key] = nid
        return nid

    def record(self, kind: str, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        ids = tuple(self._node_of(t) if t.requires_grad else -1 for t in inputs)
        out.node_id = len(self.nodes)
        self.nodes.append((kind, ids, vjp))
        self._tensors.append(out)

    def backward(self, root: Tensor) -> "Gradients":
        """Reverse sweep from a scalar ``root``.

        Every node is visited once, in reverse append order; accumulation
        order is therefore fixed and results are bit-reproducible.
        """
        if root.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        if root.node_id is None or self._tensors[root.node_id] is not root:
            return Gradients({})
        slots: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
        leaves: dict[int, np.ndarray] = {}
        for nid in range(root.node_id, -1, -1):
            g = slots.pop(nid, None)
            if g is None:
                continue
            kind, ids, vjp = self.nodes[nid]
            if kind == "leaf":
                leaves[id(self._tensors[nid])] = g
                continue
            in_grads = vjp(g)
            for pid, pg in zip(ids, in_grads):
                if pid < 0 or pg is None:
                    continue
                if pid in slots:
                    slots[pid] = slots[pid] + pg
                else:
                    slots[pid] = pg
        return Gradients(leaves)


class Gradients:
    """Leaf gradients keyed by tensor identity; absent leaves read as zero."""

    def __init__(self, by_id: dict[int, np.ndarray]):
        self._by_id = by_id

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._by_id.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._by_id


def backward(tape: Tape, root: Tensor, params: "ParameterSet") -> list[np.ndarray]:
    """Gradients of scalar ``root`` for every parameter, in ParameterSet order."""
    grads = tape.backward(root)
    return [grads[p] for p in params.values()]


class ParameterSet(OrderedDict):
    """Named parameters with deterministic order and weight-decay flags."""

    def __init__(self):
        super().__init__()
        self.decay: dict[str, bool] = {}

    def add(self, name: str, value, decay: bool | None = None) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self[name] = t
        self.decay[name] = t.ndim >= 2 if decay is None else decay
        return t

    def count(self) -> int:
        return int(sum(p.size for p in self.values()))

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.values()]

    def load(self, arrays: Iterable[np.ndarray]):
        for p, a in zip(self.values(), arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeError(f"{p.name}: expected {p.shape}, got {a.shape}")
            p.data = a.copy()


# --------------------------------------------------------------------------
# op plumbing


def _check_finite(arr: np.ndarray, kind: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {kind}")


def _make(kind: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    _check_finite(data, kind)
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape),
                            _unbroadcast(-g * out / bd, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (np.where(out > 0, 0.5 * g / np.where(out > 0, out, 1.0), 0.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a, eps: float = 0.0) -> Tensor:
    """``log(a + eps)``."""
    a = as_tensor(a)
    shifted = a.data + eps
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(shifted)
    return _make("log", out, (a,), lambda g: (g / shifted,))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    dydx = np.where(x > 0, 1.0, neg + alpha)
    return _make("elu", out, (a,), lambda g: (g * dydx,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    x = a.data
    d = np.where(x > 0, 1.0, slope)
    return _make("leaky_relu", x * d, (a,), lambda g: (g * d,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), vjp)


# --------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def std(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Population standard deviation; zero (with zero gradient) for constant input."""
    a = as_tensor(a)
    x = a.data
    n = x.shape[axis]
    mu = x.mean(axis=axis, keepdims=True)
    dev = x - mu
    sd = np.sqrt((dev * dev).mean(axis=axis, keepdims=True))
    out = sd if keepdims else np.squeeze(sd, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(sd > 0, sd, 1.0)
        return (np.where(sd > 0, g * dev / (n * safe), 0.0),)

    return _make("std", out, (a,), vjp)


def _extremum(a, axis: int, keepdims: bool, kind: str) -> Tensor:
    a = as_tensor(a)
    x = a.data
    idx = (np.argmax if kind == "max" else np.argmin)(x, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    val = np.take_along_axis(x, idx_k, axis=axis)
    out = val if keepdims else np.squeeze(val, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(x)
        np.put_along_axis(full, idx_k, g, axis=axis)
        return (full,)

    return _make(kind, out, (a,), vjp)


def max_(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    return _extremum(a, axis, keepdims, "max")


def min_(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    return _extremum(a, axis, keepdims, "min")


# --------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    return _make("stack", out, ts,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))))


def _has_array(key) -> bool:
    key = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (np.ndarray, list)) for k in key)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    fancy = _has_array(key)

    def vjp(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, key, g)
        else:
            full[key] = g
        return (full,)

    return _make("getitem", np.array(a.data[key]), (a,), vjp)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D; use linear for vectors")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul mismatch: {ad.shape} @ {bd.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """``weight @ x + bias`` over the last axis of ``x`` (leading axes batch)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    lead = xd.shape[:-1]

    def vjp(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, wd.shape[1])
        gb = g2.sum(axis=0) if bias is not None else None
        return gx.reshape(lead + (wd.shape[1],)), gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make("linear", out, inputs, vjp)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum; every index of each operand must survive in the
    output or the other operand."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_s = spec.split("->")
    sa, sb = ins.split(",")
    for mine, other in ((sa, sb), (sb, sa)):
        if set(mine) - set(out_s) - set(other):
            raise ShapeError(f"einsum {spec!r}: index summed out of a single operand")
    ad, bd = a.data, b.data
    out = np.einsum(spec, ad, bd, optimize=True)
    return _make("einsum", out, (a, b),
                 lambda g: (np.einsum(f"{out_s},{sb}->{sa}", g, bd, optimize=True),
                            np.einsum(f"{out_s},{sa}->{sb}", g, ad, optimize=True)))


# --------------------------------------------------------------------------
# convolutions over (N, C, L) or (C, L)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (C, L) or (N, C, L), got {x.shape}")


def conv_out_len(length: int, k: int, stride: int, pad: int) -> int:
    return (length + 2 * pad - k) // stride + 1


def conv1d(x, kernels, stride: int = 1, pad: int = 0, bias=None) -> Tensor:
    """Cross-correlation with zero padding. ``kernels`` is (C_out, C_in, K), K odd."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    xd, squeeze = _batched(x.data)
    w = kernels.data
    if w.ndim != 3:
        raise ShapeError(f"conv1d kernels must be (C_out, C_in, K), got {w.shape}")
    c_out, c_in, k = w.shape
    n, c, length = xd.shape
    if c != c_in:
        raise ShapeError(f"conv1d: input has {c} channels, kernels expect {c_in}")
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel length must be odd, got {k}")
    if stride < 1 or pad < 0:
        raise ShapeError("conv1d needs stride >= 1 and pad >= 0")
    if length + 2 * pad < k:
        raise ShapeError(f"conv1d: length {length} + 2*{pad} shorter than kernel {k}")
    l_out = conv_out_len(length, k, stride, pad)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :l_out, :]
    out = np.tensordot(win, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]

    def vjp(g):
        g3 = g[None] if squeeze else g
        gw = np.tensordot(g3, win, axes=([0, 2], [0, 2]))
        gwin = np.tensordot(g3, w, axes=([1], [0]))  # (N, L_out, C_in, K)
        gxp = np.zeros_like(xp)
        span = stride * (l_out - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + span:stride] += gwin[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, pad:pad + length] if pad else gxp
        gx = gx[0] if squeeze else gx
        gb = g3.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    out = out[0] if squeeze else out
    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _make("conv1d", np.ascontiguousarray(out), inputs, vjp)


def conv_transpose1d(x, kernels, stride: int = 2, pad: int = 0,
                     crop_to: int | None = None, bias=None) -> Tensor:
    """Adjoint of :func:`conv1d` w.r.t. its input. ``kernels`` is (C_in, C_out, K).

    Natural output length is ``(L - 1) * stride - 2 * pad + K``; ``crop_to``
    drops trailing samples.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    xd, squeeze = _batched(x.data)
    w = kernels.data
    if w.ndim != 3:
        raise ShapeError(f"conv_transpose1d kernels must be (C_in, C_out, K), got {w.shape}")
    c_in, c_out, k = w.shape
    n, c, length = xd.shape
    if c != c_in:
        raise ShapeError(f"conv_transpose1d: input has {c} channels, kernels expect {c_in}")
    natural = (length - 1) * stride - 2 * pad + k
    if natural < 1:
        raise ShapeError("conv_transpose1d: non-positive output length")
    if crop_to is None:
        crop_to = natural
    if crop_to > natural:
        raise ShapeError(f"crop_to={crop_to} exceeds natural output length {natural}")
    full_len = (length - 1) * stride + k
    cols = np.tensordot(xd, w, axes=([1], [0]))  # (N, L, C_out, K)
    full = np.zeros((n, c_out, full_len))
    span = stride * (length - 1) + 1
    for j in range(k):
        full[:, :, j:j + span:stride] += cols[:, :, :, j].transpose(0, 2, 1)
    out = full[:, :, pad:pad + crop_to]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]

    def vjp(g):
        g3 = g[None] if squeeze else g
        gfull = np.zeros((n, c_out, full_len))
        gfull[:, :, pad:pad + crop_to] = g3
        win = sliding_window_view(gfull, k, axis=2)[:, :, ::stride, :][:, :, :length, :]
        gx = np.tensordot(win, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
        gw = np.tensordot(xd, win, axes=([0, 2], [0, 2]))
        gb = g3.sum(axis=(0, 2)) if bias is not None else None
        return (gx[0] if squeeze else gx), gw, gb

    out = out[0] if squeeze else out
    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _make("conv_transpose1d", np.ascontiguousarray(out), inputs, vjp)


# --------------------------------------------------------------------------
# normalization


def batchnorm1d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = NORM_EPS) -> Tensor:
    """Batch norm over (N, C) or (N, C, L); statistics per channel C.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, ``momentum`` weight on the new batch).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    if xd.ndim not in (2, 3):
        raise ShapeError(f"batchnorm1d expects (N, C) or (N, C, L), got {xd.shape}")
    axes = (0,) if xd.ndim == 2 else (0, 2)
    bshape = (1, -1) if xd.ndim == 2 else (1, -1, 1)
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)
    if training:
        m = xd.size // xd.shape[1]
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        unbiased = var.reshape(-1) * (m / (m - 1) if m > 1 else 1.0)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def vjp(g):
            gxhat = g * g_
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (xd - running_mean.reshape(bshape)) * inv

        def vjp(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make("batchnorm1d", xhat * g_ + b_, (x, gamma, beta), vjp)


def layernorm(x, gamma, beta, eps: float = NORM_EPS) -> Tensor:
    """Layer norm over the last axis with affine parameters."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(xd.ndim - 1))

    def vjp(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layernorm", xhat * gd + beta.data, (x, gamma, beta), vjp)


# --------------------------------------------------------------------------
# spectral


def rfft_power(frame) -> Tensor:
    """Squared magnitude of the real DFT over the last axis (length n even)."""
    frame = as_tensor(frame)
    n = frame.shape[-1]
    if n % 2:
        raise ShapeError(f"rfft_power needs an even frame length, got {n}")
    spec = np.fft.rfft(frame.data, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2

    def vjp(g):
        # d|F_k|^2/dx_t = 2 Re(conj(F_k) e^{-i w k t}); summed over k this is
        # 2n Re(ifft(G)) with G_k = g_k F_k on the half spectrum, zero elsewhere.
        full = np.zeros(spec.shape[:-1] + (n,), dtype=complex)
        full[..., : n // 2 + 1] = g * spec
        return (2.0 * n * np.fft.ifft(full, axis=-1).real,)

    return _make("rfft_power", power, (frame,), vjp)
