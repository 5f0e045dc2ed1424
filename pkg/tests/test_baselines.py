import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from favc import baselines as bl
from favc.dataset import SOURCES, TARGETS, Montage, standard_montage
from oracles import dense_spline_predict, perrin_g

M = standard_montage()


@given(st.floats(-1.0, 1.0), st.integers(0, 9))
def test_legendre_recurrence_matches_scipy(x, n):
    assert bl.legendre_table(np.array(x), 9)[n] == pytest.approx(special.eval_legendre(n, x), abs=1e-12)


def test_kernel_matches_explicit_sum():
    x = np.linspace(-1, 1, 21)
    np.testing.assert_allclose(bl.legendre_g(x), perrin_g(x), rtol=1e-13, atol=1e-16)
    with pytest.raises(ValueError):
        bl.legendre_g(np.array([1.5]))


def test_spline_reproduces_constants():
    W = bl.spline_matrix(M)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-6)
    X = np.full((4, 10), 7.5)
    np.testing.assert_allclose(bl.spherical_spline(X, M), 7.5, atol=1e-6)


def test_spline_interpolates_sources():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((4, 6))
    c, c0 = bl.spline_coefficients(v, M)
    G = bl.legendre_g(np.clip(M.source_xyz @ M.source_xyz.T, -1, 1))
    np.testing.assert_allclose(G @ c + c0, v, atol=1e-6)
    np.testing.assert_allclose(c.sum(axis=0), 0.0, atol=1e-9)


def test_spline_matches_dense_solve_oracle():
    rng = np.random.default_rng(1)
    W = bl.spline_matrix(M)
    for _ in range(3):
        v = rng.standard_normal(4)
        ref = dense_spline_predict(M.source_xyz, M.target_xyz, v)
        np.testing.assert_allclose(W @ v, ref, atol=1e-9)


def test_spline_batched_coefficients_agree():
    v = np.random.default_rng(2).standard_normal((3, 4, 5))
    c, c0 = bl.spline_coefficients(v, M)
    c1, c01 = bl.spline_coefficients(v[1], M)
    np.testing.assert_allclose(c[1], c1, atol=1e-12)
    np.testing.assert_allclose(c0[1], c01, atol=1e-12)


def test_idw_weights():
    W = bl.idw_matrix(M)
    assert W.shape == (13, 4)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(W > 0)
    d = bl.chord_distances(M)
    # closer sources weigh more within every row
    for w, row in zip(W, d):
        order = np.argsort(row)
        assert np.all(np.diff(w[order]) <= 1e-15)


def test_nni_copies_nearest_source():
    W = bl.nni_matrix(M)
    np.testing.assert_array_equal(W.sum(axis=1), 1.0)
    d = bl.chord_distances(M)
    np.testing.assert_array_equal(W.argmax(axis=1), d.argmin(axis=1))
    # F3 is nearest to F7 or Fp1, never to a right-hemisphere electrode
    f3 = TARGETS.index("F3")
    assert SOURCES[int(W[f3].argmax())] in ("Fp1", "F7")


def test_baselines_are_linear_maps():
    X = np.random.default_rng(3).standard_normal((2, 4, 50))
    for name, fn in bl.BASELINES.items():
        out = fn(X, M)
        assert out.shape == (2, 13, 50)
        np.testing.assert_allclose(fn(2 * X, M), 2 * out, atol=1e-10)


def test_idw_coincident_target_copies_source():
    xyz = M.xyz.copy()
    xyz[M.index("F3")] = xyz[M.index("Fp1")]
    mm = Montage(M.names, xyz, M.xy, M.source_idx, M.target_idx)
    W = bl.idw_matrix(mm)
    np.testing.assert_array_equal(W[TARGETS.index("F3")], [1.0, 0.0, 0.0, 0.0])


def test_coincident_sources_fall_back_to_ridge():
    xyz = M.xyz.copy()
    for name in SOURCES:
        xyz[M.index(name)] = xyz[M.index("Fp1")]
    mm = Montage(M.names, xyz, M.xy, M.source_idx, M.target_idx)
    np.testing.assert_allclose(bl.spline_matrix(mm), 0.25, atol=1e-9)


def test_unrescuable_system_raises(monkeypatch):
    monkeypatch.setattr(bl, "RESCUE_COND", 1.0)
    with pytest.raises(bl.SplineError):
        bl.spline_matrix(M)
