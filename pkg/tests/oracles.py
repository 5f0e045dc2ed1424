"""Independent reference implementations used as test oracles.

They share no code with the package: loops, explicit sums and brute-force
enumeration stand in for the vectorised production paths.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import special

from favc import tensor as tc


def gradcheck(fn, arrays, h: float = 1e-5, seed: int = 0):
    """Central finite differences vs the tape for every entry of every input.

    Non-scalar outputs are contracted with fixed random weights. Returns the
    relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ts = [tc.Tensor(a.copy(), requires_grad=True) for a in arrays]
    w = np.random.default_rng(seed).standard_normal(fn(*[tc.Tensor(a) for a in arrays]).shape)

    def scalar(*vals):
        return float(np.sum(fn(*[tc.Tensor(v) for v in vals]).data * w))

    with tc.Tape() as tape:
        out = fn(*ts)
        root = tc.sum_(tc.mul(out, w))
    grads = tape.backward(root)
    analytic = np.concatenate([grads[t].ravel() for t in ts])
    numeric = []
    for i, a in enumerate(arrays):
        for j in range(a.size):
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[i].flat[j] += h
            minus[i].flat[j] -= h
            numeric.append((scalar(*plus) - scalar(*minus)) / (2 * h))
    numeric = np.array(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / scale)


def naive_welch(x, fs, nwin, hop, fmin=0.5, fmax=45.0):
    """Welch PSD by explicit DFT sums over every frame (1-D signal)."""
    x = np.asarray(x, dtype=np.float64)
    n = np.arange(nwin)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / (nwin - 1))
    frames = [x[s:s + nwin] for s in range(0, len(x) - nwin + 1, hop)]
    ks = [k for k in range(nwin // 2 + 1) if fmin - 1e-9 <= k * fs / nwin <= fmax + 1e-9]
    out = []
    for k in ks:
        e = np.exp(-2j * np.pi * k * n / nwin)
        p = np.mean([abs(np.sum(f * w * e)) ** 2 for f in frames])
        out.append(p / (fs * np.sum(w * w)))
    return np.array(out), np.array(ks) * fs / nwin


def perrin_g(x, m=4, n_max=7):
    return sum((2 * n + 1) / (n ** m * (n + 1) ** m) * special.eval_legendre(n, x)
               for n in range(1, n_max + 1)) / (4 * np.pi)


def dense_spline_predict(src_xyz, tgt_xyz, v):
    """Solve the bordered spline system for one value vector, then evaluate at the targets."""
    k = len(src_xyz)
    A = np.zeros((k + 1, k + 1))
    for i in range(k):
        for j in range(k):
            A[i, j] = perrin_g(np.clip(src_xyz[i] @ src_xyz[j], -1, 1))
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    sol = np.linalg.solve(A, np.append(v, 0.0))
    c, c0 = sol[:k], sol[k]
    return np.array([c0 + sum(c[i] * perrin_g(np.clip(t @ src_xyz[i], -1, 1)) for i in range(k))
                     for t in tgt_xyz])


def enumerate_wilcoxon(d):
    """Two-sided signed-rank p-value by listing all 2^n sign patterns."""
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0]
    a = np.abs(d)
    ranks = np.array([np.sum(a < v) + (np.sum(a == v) + 1) / 2.0 for v in a])
    w_obs = ranks[d > 0].sum()
    lo = hi = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = ranks[np.array(signs, dtype=bool)].sum()
        lo += w <= w_obs + 1e-9
        hi += w >= w_obs - 1e-9
        total += 1
    return min(1.0, 2.0 * min(lo, hi) / total)
