"""Classical interpolation comparators mapping the 4 sources onto the 13 targets.

Every baseline is a fixed (13, 4) linear map, applied to (..., 4, T) arrays.
"""

from __future__ import annotations

import numpy as np

from .dataset import Montage, standard_montage

SPLINE_ORDER = 4
SPLINE_TERMS = 7
RESCUE_RIDGE = 1e-5
RESCUE_COND = 1e10


class SplineError(np.linalg.LinAlgError):
    pass


def legendre_table(x, n_max: int) -> np.ndarray:
    """P_0..P_{n_max} at x via the three-term recurrence; shape (n_max + 1, *x.shape)."""
    x = np.asarray(x, dtype=np.float64)
    P = np.empty((n_max + 1,) + x.shape)
    P[0] = 1.0
    if n_max >= 1:
        P[1] = x
    for n in range(1, n_max):
        P[n + 1] = ((2 * n + 1) * x * P[n] - n * P[n - 1]) / (n + 1)
    return P


def legendre_g(x, m: int = SPLINE_ORDER, n_max: int = SPLINE_TERMS) -> np.ndarray:
    """Spherical-spline kernel g(x) = 1/(4 pi) sum_n (2n+1) / (n^m (n+1)^m) P_n(x)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1 + 1e-12):
        raise ValueError("legendre_g needs |x| <= 1")
    P = legendre_table(np.clip(x, -1.0, 1.0), n_max)
    n = np.arange(1, n_max + 1, dtype=np.float64)
    coef = (2 * n + 1) / (n ** m * (n + 1) ** m)
    return np.tensordot(coef, P[1:], axes=1) / (4 * np.pi)


def spline_system(src_xyz: np.ndarray, ridge: float = 0.0, m: int = SPLINE_ORDER,
                  n_max: int = SPLINE_TERMS) -> np.ndarray:
    """Bordered system [[G + ridge I, 1], [1^T, 0]] for sources on the unit sphere."""
    G = legendre_g(np.clip(src_xyz @ src_xyz.T, -1, 1), m, n_max)
    k = len(src_xyz)
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = G + ridge * np.eye(k)
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    return A


def spline_matrix(montage: Montage | None = None, ridge: float = 0.0, m: int = SPLINE_ORDER,
                  n_max: int = SPLINE_TERMS) -> np.ndarray:
    """(13, 4) spherical-spline interpolation matrix.

    The bordered system is factored once. If it is numerically singular, a
    small ridge (``RESCUE_RIDGE``) is tried before giving up.
    """
    montage = montage or standard_montage()
    src, tgt = montage.source_xyz, montage.target_xyz
    A = spline_system(src, ridge, m, n_max)
    if np.linalg.cond(A) > RESCUE_COND:
        A = spline_system(src, max(ridge, RESCUE_RIDGE), m, n_max)
        if np.linalg.cond(A) > RESCUE_COND:
            raise SplineError(f"spline system singular for montage {montage.fingerprint()}")
    k = len(src)
    # solution [c; c0] = A^{-1} [v; 0]; keep the columns acting on v
    inv = np.linalg.solve(A, np.eye(k + 1))[:, :k]
    g_t = legendre_g(np.clip(tgt @ src.T, -1, 1), m, n_max)
    return np.hstack([g_t, np.ones((len(tgt), 1))]) @ inv


def spline_coefficients(v: np.ndarray, montage: Montage | None = None, ridge: float = 0.0):
    """Per-sample spline coefficients: returns (c (..., 4, T), c0 (..., T))."""
    montage = montage or standard_montage()
    A = spline_system(montage.source_xyz, ridge)
    v = np.asarray(v, dtype=np.float64)
    rhs = np.concatenate([v, np.zeros(v.shape[:-2] + (1, v.shape[-1]))], axis=-2)
    sol = np.linalg.solve(A, rhs) if rhs.ndim == 2 else np.einsum("ij,...jt->...it", np.linalg.inv(A), rhs)
    return sol[..., :-1, :], sol[..., -1, :]


def chord_distances(montage: Montage | None = None) -> np.ndarray:
    montage = montage or standard_montage()
    diff = montage.target_xyz[:, None, :] - montage.source_xyz[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def idw_matrix(montage: Montage | None = None, p: float = 2.0) -> np.ndarray:
    d = chord_distances(montage)
    W = np.empty_like(d)
    for t, row in enumerate(d):
        hit = row < 1e-12
        if hit.sum() > 1:
            raise ValueError("target coincides with more than one source")
        if hit.any():
            W[t] = hit.astype(np.float64)
        else:
            w = row ** -p
            W[t] = w / w.sum()
    return W


def nni_matrix(montage: Montage | None = None) -> np.ndarray:
    """One-hot copy of the chord-nearest source; ties go to the earlier source row."""
    d = chord_distances(montage)
    W = np.zeros_like(d)
    W[np.arange(len(d)), np.argmin(d, axis=1)] = 1.0
    return W


def apply(W: np.ndarray, X) -> np.ndarray:
    return np.einsum("ts,...sl->...tl", W, np.asarray(X, dtype=np.float64))


def spherical_spline(X, montage: Montage | None = None, ridge: float = 0.0) -> np.ndarray:
    return apply(spline_matrix(montage, ridge), X)


def idw(X, montage: Montage | None = None, p: float = 2.0) -> np.ndarray:
    return apply(idw_matrix(montage, p), X)


def nni(X, montage: Montage | None = None) -> np.ndarray:
    return apply(nni_matrix(montage), X)


BASELINES = {"nni": nni, "idw": idw, "spline": spherical_spline}
