import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from favc import dsp, objectives as ob
from favc import tensor as tc
from favc.dsp import EPS, WelchConfig
from favc.objectives import LossWeights
from oracles import gradcheck

W = WelchConfig(fs=64.0, nwin=32, hop=16, fmin=2.0, fmax=30.0)
R = np.random.default_rng(11)


def _pair(n=2, T=64, scale=5.0):
    y = scale * R.standard_normal((n, 13, T))
    return y + 0.5 * R.standard_normal(y.shape), y


def test_welch_tensor_matches_numpy():
    y = R.standard_normal((2, 13, 64))
    np.testing.assert_allclose(ob.welch_psd_t(y, W).data, dsp.welch_psd(y, W), rtol=1e-12)


def test_wave_loss_value():
    y_hat, y = _pair()
    sigma = np.linspace(1, 3, 13)
    ref = np.mean(np.abs(y_hat - y) / (sigma + EPS)[:, None])
    assert float(ob.wave_loss(y_hat, y, sigma).data) == pytest.approx(ref, rel=1e-12)


def test_psd_loss_zero_at_identity():
    _, y = _pair()
    assert float(ob.psd_loss(y, y, W).data) == pytest.approx(0.0, abs=1e-12)


def test_loss_gradients():
    y_hat, y = _pair(n=1, T=64)
    sigma = np.linspace(1, 3, 13)
    assert gradcheck(lambda a: ob.psd_loss(a, y, W), [y_hat]) < 1e-5
    assert gradcheck(lambda a: ob.total_loss(a, y, sigma, W)[0], [y_hat]) < 1e-5


def test_zero_psd_weight_skips_welch():
    y_hat, y = _pair()
    before = ob.WELCH_CALLS["count"]
    loss, parts = ob.total_loss(y_hat, y, np.ones(13), W, LossWeights.with_psd(0.0))
    assert ob.WELCH_CALLS["count"] == before
    assert np.isnan(parts["psd"]) and parts["total"] == pytest.approx(parts["wave"])
    ob.total_loss(y_hat, y, np.ones(13), W)
    assert ob.WELCH_CALLS["count"] == before + 1


def test_default_weights_and_validation():
    w = LossWeights()
    assert (w.w_wave, w.w_psd, w.lam_log, w.lam_band, w.lam_slope) == (0.9, 0.1, 1.0, 1.0, 0.5)
    assert LossWeights.with_psd(0.1) == w
    with pytest.raises(ValueError):
        LossWeights(w_wave=0.5, w_psd=0.1)


def test_metric_identities():
    _, y = _pair(scale=10.0)
    S = dsp.welch_psd(y, W)
    assert np.max(ob.nmae(y, y, np.ones(13))) == 0
    np.testing.assert_allclose(ob.pearson(y, y), 1.0, atol=1e-9)
    np.testing.assert_allclose(ob.lsd(S, S), 0.0, atol=1e-9)
    np.testing.assert_allclose(ob.psd_kl(S, S), 0.0, atol=1e-9)
    np.testing.assert_allclose(ob.sci(S, S, W.freqs)[0], 0.0, atol=1e-9)
    np.testing.assert_allclose(ob.cftc(S, S), 1.0, atol=1e-9)


def test_lsd_of_e_scaled_spectrum_is_one():
    S = 10 ** R.uniform(2, 3, size=(13, 90))
    assert float(ob.lsd(np.e * S, S)) == pytest.approx(1.0, abs=1e-9)


def test_kl_one_hot_vs_uniform():
    S = np.zeros((13, 90))
    S[:, 17] = 1.0
    U = np.ones((13, 90))
    kl = float(ob.psd_kl(U, S))
    p = 1.0 / (1.0 + EPS)
    q = 1.0 / (90.0 + EPS)
    assert kl == pytest.approx(p * np.log((p + EPS) / (q + EPS)), abs=1e-9)
    assert kl == pytest.approx(np.log(90.0), abs=1e-6)


@given(hnp.arrays(np.float64, (3, 20), elements=st.floats(0.01, 100.0)),
       hnp.arrays(np.float64, (3, 20), elements=st.floats(0.01, 100.0)))
def test_kl_is_non_negative(a, b):
    assert float(ob.psd_kl(a, b)) >= -1e-12


@given(hnp.arrays(np.float64, (3, 20), elements=st.floats(0.5, 100.0)),
       hnp.arrays(np.float64, (3, 1), elements=st.floats(0.5, 50.0)))
def test_kl_per_channel_scale_invariance(S, c):
    S_hat = S[::-1] + 1.0
    assert float(ob.psd_kl(c * S_hat, S)) == pytest.approx(float(ob.psd_kl(S_hat, S)), abs=1e-6)


@given(st.floats(0.1, 10.0))
def test_cftc_invariant_to_global_scale(c):
    S = 10 ** R.uniform(0, 3, size=(13, 45))
    S_hat = S * 10 ** R.uniform(-0.3, 0.3, size=S.shape)
    assert float(ob.cftc(c * S_hat, S)) == pytest.approx(float(ob.cftc(S_hat, S)), abs=1e-6)


def test_collapsed_prediction_registers():
    _, y = _pair(n=3, T=64, scale=1.0)
    y = y * np.linspace(0.5, 4, 13)[:, None]
    S = dsp.welch_psd(y, W)
    collapsed = np.repeat(y.mean(axis=1, keepdims=True), 13, axis=1)
    assert ob.sci(dsp.welch_psd(collapsed, W), S, W.freqs)[0].min() >= 0.9
    np.testing.assert_allclose(ob.btvr(dsp.welch_psd(collapsed, W), S, W.freqs), 0.0, atol=1e-6)


def test_cftc_zero_variance_warns():
    with pytest.warns(RuntimeWarning):
        assert float(ob.cftc(np.ones((13, 10)), np.ones((13, 10)))) == 0.0


def test_evaluate_and_subject_aggregation():
    y_hat, y = _pair(n=4, T=64)
    rep = ob.evaluate(y_hat, y, np.ones(13), W, ["b", "a", "b", "a"])
    assert rep.channel["nmae"].shape == (4, 13)
    assert set(rep.segment) == set(ob.SEGMENT_METRICS)
    ids, vals = rep.subject_level("lsd")
    assert ids == ["a", "b"]
    np.testing.assert_allclose(vals, [rep.segment["lsd"][[1, 3]].mean(), rep.segment["lsd"][[0, 2]].mean()])
    mean, sd = rep.summary()["lsd"]
    assert mean == pytest.approx(vals.mean()) and sd == pytest.approx(vals.std(ddof=1))
    np.testing.assert_allclose(rep.channel["raw_mae"], rep.channel["nmae"])
    with pytest.raises(ValueError):
        ob.evaluate(y_hat[:, :3], y, np.ones(13), W, ["a"] * 4)


def test_mismatched_grids_rejected():
    with pytest.raises(ValueError):
        ob.lsd(np.ones((13, 90)), np.ones((13, 45)))
