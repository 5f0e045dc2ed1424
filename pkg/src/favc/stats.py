"""Paired Wilcoxon signed-rank test with an exact null for small samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sp_stats

EXACT_MAX_N = 20
MIN_N = 5


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    w_plus: float
    pvalue: float
    n: int
    exact: bool


def exact_null_counts(ranks) -> tuple[np.ndarray, int]:
    """Number of sign patterns giving each value of 2*W+ (midranks make W+ half-integral).

    Equivalent to enumerating all 2^n sign assignments, but accumulated by
    convolution over ranks.
    """
    doubled = np.rint(2 * np.asarray(ranks, dtype=np.float64)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts, total


def wilcoxon_signed_rank(a, b, exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """Two-sided signed-rank test of paired samples ``a`` and ``b``.

    Zero differences are dropped, ties get midranks. For n <= ``exact_max_n``
    the p-value comes from the exact permutation null; above that a normal
    approximation with tie and continuity corrections is used.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("wilcoxon_signed_rank expects 1-D paired samples")
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all paired differences are zero")
    if n < MIN_N:
        raise ValueError(f"need at least {MIN_N} non-zero differences, got {n}")
    ranks = sp_stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= exact_max_n:
        counts, _ = exact_null_counts(ranks)
        k = int(round(2 * w_plus))
        total = float(2 ** n)
        p_lo = counts[: k + 1].sum() / total
        p_hi = counts[k:].sum() / total
        p = min(1.0, 2.0 * min(p_lo, p_hi))
        return WilcoxonResult(stat, w_plus, p, n, True)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    diff = w_plus - mean
    z = (abs(diff) - 0.5) / np.sqrt(var) if abs(diff) >= 0.5 else 0.0
    p = min(1.0, 2.0 * sp_stats.norm.sf(z))
    return WilcoxonResult(stat, w_plus, p, n, False)


def win_rate(model_values, other_values, direction: int = -1) -> float:
    """Fraction of paired units where the model is strictly better."""
    a = np.asarray(model_values, dtype=np.float64)
    b = np.asarray(other_values, dtype=np.float64)
    better = a < b if direction < 0 else a > b
    return float(better.mean())
