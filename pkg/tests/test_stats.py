import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sp

from favc.stats import exact_null_counts, wilcoxon_signed_rank, win_rate
from oracles import enumerate_wilcoxon


@settings(max_examples=25)
@given(st.integers(5, 11), st.integers(0, 10_000), st.booleans())
def test_exact_p_matches_enumeration(n, seed, ties):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(n) + 0.3
    if ties:
        d = np.round(d, 1)  # produces tied magnitudes and midranks
        if np.count_nonzero(d) < 5:
            d[d == 0] = 0.7
    res = wilcoxon_signed_rank(d, np.zeros(n))
    assert res.exact
    assert res.pvalue == pytest.approx(enumerate_wilcoxon(d), abs=1e-12)


def test_enumeration_at_n13():
    d = np.random.default_rng(5).standard_normal(13) + 0.5
    assert wilcoxon_signed_rank(d, 0 * d).pvalue == pytest.approx(enumerate_wilcoxon(d), abs=1e-12)


def test_matches_scipy_exact_without_ties():
    d = np.random.default_rng(1).standard_normal(12)
    ref = sp.wilcoxon(d, method="exact").pvalue
    assert wilcoxon_signed_rank(d, np.zeros(12)).pvalue == pytest.approx(ref, abs=1e-12)


def test_known_small_sample_values():
    assert wilcoxon_signed_rank(np.arange(1, 7), np.zeros(6)).pvalue == 0.03125
    r = wilcoxon_signed_rank(np.arange(1, 14), np.zeros(13))
    assert r.pvalue == 2 / 2 ** 13
    assert f"{r.pvalue:.6f}" == "0.000244"
    assert r.statistic == 0 and r.w_plus == 91


def test_null_counts_total_two_to_n():
    counts, total = exact_null_counts([1, 2, 3, 4, 5])
    assert counts.sum() == 32 and total == 30
    np.testing.assert_array_equal(counts, counts[::-1])


@given(st.integers(0, 1000))
def test_swapping_arguments_keeps_p(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(9), rng.standard_normal(9)
    x, y = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
    assert x.pvalue == pytest.approx(y.pvalue, abs=1e-15)
    assert x.statistic == y.statistic


def test_degenerate_inputs_rejected():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.ones(8), np.ones(8))
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.arange(4.0), np.zeros(4) - 1)
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.ones((3, 3)), np.zeros((3, 3)))


def test_zero_differences_dropped():
    d = np.array([0, 0, 1, 2, 3, 4, 5, 6])
    r = wilcoxon_signed_rank(d, np.zeros(8))
    assert r.n == 6 and r.pvalue == 0.03125


def test_normal_approximation_above_twenty():
    d = np.random.default_rng(2).standard_normal(40) + 0.4
    r = wilcoxon_signed_rank(d, np.zeros(40))
    assert not r.exact
    ref = sp.wilcoxon(d, method="approx", correction=True).pvalue
    assert r.pvalue == pytest.approx(ref, rel=1e-9)


def test_win_rate_is_strict():
    assert win_rate([1, 2, 3, 4], [2, 2, 2, 2]) == 0.25
    assert win_rate([1, 2, 3, 4], [2, 2, 2, 2], direction=1) == 0.5
