import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from favc import tensor as tc
from oracles import gradcheck

R = np.random.default_rng(7)


def away_from_zero(shape, margin=0.2):
    u = R.standard_normal(shape)
    return np.sign(u) * (margin + np.abs(u))


def positive(shape):
    return 0.5 + R.random(shape)


def _bn_train(x, g, b):
    return tc.batchnorm1d(x, g, b, np.zeros(3), np.ones(3), training=True)


def _bn_eval(x, g, b):
    return tc.batchnorm1d(x, g, b, np.array([0.1, -0.2, 0.3]), np.array([0.5, 1.5, 2.0]), training=False)


# (name, function of tensors, input arrays); used by the gradient tests and the acceptance suite
PRIMITIVE_CASES = [
    ("add_broadcast", lambda a, b: tc.add(a, b), [R.standard_normal((3, 4)), R.standard_normal((4,))]),
    ("sub", lambda a, b: tc.sub(a, b), [R.standard_normal((3, 4)), R.standard_normal((3, 1))]),
    ("mul", lambda a, b: tc.mul(a, b), [R.standard_normal((2, 3)), R.standard_normal((2, 3))]),
    ("div", lambda a, b: tc.div(a, b), [R.standard_normal((2, 3)), away_from_zero((2, 3), 0.5)]),
    ("scale", lambda a: tc.scale(a, -2.5), [R.standard_normal((5,))]),
    ("abs", lambda a: tc.abs_(a), [away_from_zero((6,))]),
    ("square", lambda a: tc.square(a), [R.standard_normal((4,))]),
    ("sqrt", lambda a: tc.sqrt(a), [positive((4,))]),
    ("exp", lambda a: tc.exp(a), [R.standard_normal((4,))]),
    ("log", lambda a: tc.log(a, 1e-3), [positive((4,))]),
    ("elu", lambda a: tc.elu(a), [away_from_zero((8,))]),
    ("leaky_relu", lambda a: tc.leaky_relu(a, 0.2), [away_from_zero((8,))]),
    ("sigmoid", lambda a: tc.sigmoid(a), [R.standard_normal((5,))]),
    ("softmax", lambda a: tc.softmax(a, axis=-1), [R.standard_normal((3, 5))]),
    ("sum_axis", lambda a: tc.sum_(a, axis=1, keepdims=True), [R.standard_normal((3, 4))]),
    ("mean", lambda a: tc.mean(a, axis=0), [R.standard_normal((3, 4))]),
    ("std", lambda a: tc.std(a, axis=-1), [R.standard_normal((3, 6))]),
    ("max", lambda a: tc.max_(a, axis=-1), [R.standard_normal((3, 6))]),
    ("min", lambda a: tc.min_(a, axis=0), [R.standard_normal((4, 3))]),
    ("reshape", lambda a: tc.reshape(a, (6, 2)), [R.standard_normal((3, 4))]),
    ("transpose", lambda a: tc.transpose(a, (2, 0, 1)), [R.standard_normal((2, 3, 4))]),
    ("concat", lambda a, b: tc.concat([a, b], axis=1), [R.standard_normal((2, 3)), R.standard_normal((2, 2))]),
    ("stack", lambda a, b: tc.stack([a, b], axis=0), [R.standard_normal((3,)), R.standard_normal((3,))]),
    ("getitem_fancy", lambda a: tc.getitem(a, (slice(None), np.array([0, 2, 2, 1]))),
     [R.standard_normal((2, 3))]),
    ("matmul", lambda a, b: tc.matmul(a, b), [R.standard_normal((2, 3, 4)), R.standard_normal((4, 2))]),
    ("linear", lambda x, w, b: tc.linear(x, w, b),
     [R.standard_normal((2, 3, 4)), R.standard_normal((5, 4)), R.standard_normal((5,))]),
    ("einsum", lambda a, b: tc.einsum("ntic,nicl->ntcl", a, b),
     [R.standard_normal((2, 3, 4, 2)), R.standard_normal((2, 4, 2, 5))]),
    ("conv1d", lambda x, w, b: tc.conv1d(x, w, stride=2, pad=1, bias=b),
     [R.standard_normal((2, 3, 9)), R.standard_normal((4, 3, 3)), R.standard_normal((4,))]),
    ("conv_transpose1d", lambda x, w, b: tc.conv_transpose1d(x, w, stride=2, pad=1, crop_to=9, bias=b),
     [R.standard_normal((2, 3, 5)), R.standard_normal((3, 2, 4)), R.standard_normal((2,))]),
    ("batchnorm_train", _bn_train, [R.standard_normal((4, 3, 5)), positive((3,)), R.standard_normal((3,))]),
    ("batchnorm_eval", _bn_eval, [R.standard_normal((4, 3)), positive((3,)), R.standard_normal((3,))]),
    ("layernorm", lambda x, g, b: tc.layernorm(x, g, b),
     [R.standard_normal((3, 6)), positive((6,)), R.standard_normal((6,))]),
    ("rfft_power", lambda a: tc.rfft_power(a), [R.standard_normal((2, 16))]),
]


@pytest.mark.parametrize("name,fn,arrays", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients(name, fn, arrays):
    assert gradcheck(fn, arrays) < 1e-5


def test_conv_transpose_is_adjoint_of_conv():
    x = R.standard_normal((2, 3, 11))
    w = R.standard_normal((4, 3, 3))
    y = R.standard_normal((2, 4, tc.conv_out_len(11, 3, 2, 1)))
    lhs = np.sum(tc.conv1d(x, w, stride=2, pad=1).data * y)
    rhs = np.sum(x * tc.conv_transpose1d(y, w, stride=2, pad=1, crop_to=11).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv1d_matches_direct_sum():
    x = R.standard_normal((2, 7))
    w = R.standard_normal((3, 2, 3))
    out = tc.conv1d(x, w, stride=1, pad=1).data
    xp = np.pad(x, ((0, 0), (1, 1)))
    ref = np.array([[sum(w[o, c, j] * xp[c, t + j] for c in range(2) for j in range(3)) for t in range(7)]
                    for o in range(3)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_transpose_lengths_and_crop():
    y = tc.conv_transpose1d(np.ones((1, 2, 5)), np.ones((2, 1, 4)), stride=2, pad=1)
    assert y.shape == (1, 1, 10)
    with pytest.raises(tc.ShapeError):
        tc.conv_transpose1d(np.ones((1, 2, 5)), np.ones((2, 1, 4)), stride=2, pad=1, crop_to=11)


def test_shape_errors():
    with pytest.raises(tc.ShapeError):
        tc.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(tc.ShapeError):
        tc.conv1d(np.ones((1, 2, 5)), np.ones((1, 2, 4)))
    with pytest.raises(tc.ShapeError):
        tc.einsum("ij,jk->i", np.ones((2, 3)), np.ones((3, 4)))
    with pytest.raises(tc.ShapeError):
        tc.rfft_power(np.ones(7))


def test_non_scalar_root_rejected():
    a = tc.Tensor(np.ones(3), requires_grad=True)
    with tc.Tape() as tape:
        b = tc.scale(a, 2.0)
    with pytest.raises(tc.ShapeError):
        tape.backward(b)


def test_non_finite_forward_raises():
    with pytest.raises(tc.NonFiniteError):
        tc.log(np.array([0.0, 1.0]))


def test_gradient_accumulates_over_reuse():
    a = tc.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with tc.Tape() as tape:
        y = tc.sum_(tc.mul(a, a) + a)
    np.testing.assert_allclose(tape.backward(y)[a], 2 * a.data + 1)


def test_unused_parameter_gets_zero_gradient():
    ps = tc.ParameterSet()
    used = ps.add("used", np.ones(2))
    ps.add("unused", np.ones((2, 2)))
    with tc.Tape() as tape:
        y = tc.sum_(tc.scale(used, 3.0))
    g = tc.backward(tape, y, ps)
    np.testing.assert_array_equal(g[0], [3.0, 3.0])
    np.testing.assert_array_equal(g[1], np.zeros((2, 2)))


def test_no_tape_records_nothing():
    a = tc.Tensor(np.ones(2), requires_grad=True)
    assert tc.add(a, 1.0).node_id is None


def test_parameter_set_flags_and_roundtrip():
    ps = tc.ParameterSet()
    ps.add("W", np.ones((2, 2)))
    ps.add("b", np.zeros(2))
    ps.add("lam", np.array(1.0), decay=False)
    assert ps.decay == {"W": True, "b": False, "lam": False}
    assert ps.count() == 7
    snap = ps.snapshot()
    ps["W"].data[:] = 5
    ps.load(snap)
    np.testing.assert_array_equal(ps["W"].data, np.ones((2, 2)))
    with pytest.raises(KeyError):
        ps.add("W", np.ones(1))


def test_std_of_constant_has_zero_gradient():
    a = tc.Tensor(np.full((2, 5), 3.0), requires_grad=True)
    with tc.Tape() as tape:
        s = tc.std(a, axis=-1)
        y = tc.sum_(s)
    np.testing.assert_array_equal(s.data, 0.0)
    np.testing.assert_array_equal(tape.backward(y)[a], 0.0)


def test_batchnorm_updates_running_buffers():
    rm, rv = np.zeros(2), np.ones(2)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    tc.batchnorm1d(x, np.ones(2), np.zeros(2), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(0, ddof=1))


def test_rfft_power_matches_numpy():
    x = R.standard_normal(32)
    np.testing.assert_allclose(tc.rfft_power(x).data, np.abs(np.fft.rfft(x)) ** 2, rtol=1e-12)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = tc.softmax(x, axis=-1).data
    np.testing.assert_allclose(s.sum(-1), 1.0, rtol=1e-12)
    assert np.all(s >= 0)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite))
def test_sum_gradient_is_ones_for_any_input(x):
    a = tc.Tensor(x, requires_grad=True)
    with tc.Tape() as tape:
        y = tc.sum_(tc.add(a, 1.0))
    np.testing.assert_array_equal(tape.backward(y)[a], np.ones_like(x))


@given(st.integers(1, 3), st.integers(1, 3), st.integers(4, 12), st.sampled_from([1, 3, 5]),
       st.integers(1, 3), st.integers(0, 2))
def test_conv_adjoint_identity_holds_generally(cin, cout, L, k, stride, pad):
    rng = np.random.default_rng(L * 31 + k)
    x = rng.standard_normal((1, cin, L))
    w = rng.standard_normal((cout, cin, k))
    if tc.conv_out_len(L, k, stride, pad) < 1:
        return
    fwd = tc.conv1d(x, w, stride=stride, pad=pad).data
    y = rng.standard_normal(fwd.shape)
    natural = (fwd.shape[-1] - 1) * stride - 2 * pad + k
    if natural < L:
        return
    back = tc.conv_transpose1d(y, w, stride=stride, pad=pad, crop_to=L).data
    assert np.sum(fwd * y) == pytest.approx(np.sum(x * back), rel=1e-10, abs=1e-10)
