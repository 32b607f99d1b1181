import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from evtflu import unigp
from evtflu.errors import DomainError
from evtflu.unigp import ReturnLevelQuery, UnivariateGpFit


def exp_fit(u, sigma, p):
    return UnivariateGpFit(u, p, sigma, 0.0, math.nan, (math.nan, math.nan), 1, True)


@pytest.mark.parametrize("x,s,g,expected", [(0.0, 3.0, 0.2, 0.0), (math.log(2), 1, 0, 0.5), (1, 1, 1, 0.5)])
def test_gp_cdf_values(x, s, g, expected):
    assert unigp.gp_cdf(x, s, g) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.1, 100), st.floats(-0.8, 1.5))
def test_quantile_inverts_cdf(q, s, g):
    assert unigp.gp_cdf(unigp.gp_quantile(q, s, g), s, g) == pytest.approx(q, rel=1e-9)


def test_gp_cdf_matches_scipy():
    x = np.linspace(0, 5, 11)
    for g in (-0.3, 0.0, 0.4):
        np.testing.assert_allclose(unigp.gp_cdf(x, 2.0, g), stats.genpareto.cdf(x, g, scale=2.0), atol=1e-12)


def test_exponential_mle_is_mean():
    fit = unigp.fit_exponential([1, 2, 3])
    assert fit.sigma == 2.0
    assert fit.log_lik == pytest.approx(stats.expon.logpdf([1, 2, 3], scale=2).sum())
    lo, hi = fit.sigma_ci
    assert lo == pytest.approx(2 - 1.959964 * 2 / math.sqrt(3), rel=1e-5)
    assert hi == pytest.approx(2 + 1.959964 * 2 / math.sqrt(3), rel=1e-5)


def test_free_fit_matches_scipy():
    x = stats.genpareto.rvs(0.25, scale=3.0, size=2000, random_state=np.random.default_rng(4))
    fit = unigp.fit_gp_excesses(x)
    g, _, s = stats.genpareto.fit(x, floc=0)
    assert fit.gamma == pytest.approx(g, abs=2e-3)
    assert fit.sigma == pytest.approx(s, rel=2e-3)
    assert fit.log_lik >= stats.genpareto.logpdf(x, g, scale=s).sum() - 1e-6


def test_lr_test_values():
    a = exp_fit(0, 1, 1)
    same = UnivariateGpFit(0, 1, 1, 0.1, -10.0, (0, 0), 1, False)
    ref = UnivariateGpFit(0, 1, 1, 0.0, -10.0, (0, 0), 1, True)
    assert unigp.lr_test_gamma_zero(same, ref) == 1.0
    free = UnivariateGpFit(0, 1, 1, 0.1, -10.0 + 3.841 / 2, (0, 0), 1, False)
    assert unigp.lr_test_gamma_zero(free, ref) == pytest.approx(stats.chi2.sf(3.841, 1))
    assert unigp.lr_test_gamma_zero(free, ref) == pytest.approx(0.05, abs=1e-4)
    del a


def test_tail_cdf_boundary_and_limit():
    fit = exp_fit(339, 392, 0.88)
    assert unigp.tail_cdf(339, fit) == pytest.approx(0.12)
    assert unigp.tail_cdf(1e9, fit) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        unigp.tail_cdf(300, fit)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 0.999), st.integers(1, 20), st.floats(-0.4, 0.6))
def test_return_level_round_trip(alpha, n, gamma):
    fit = UnivariateGpFit(339, 0.88, 392, gamma, math.nan, (0, 0), 1, gamma == 0)
    if 1 - alpha ** (1 / n) > 0.88:
        return
    y = unigp.return_level(fit, ReturnLevelQuery(alpha, n))
    assert unigp.tail_cdf(y, fit) ** n == pytest.approx(alpha, rel=1e-9)


def test_return_level_table_examples():
    week3, size = exp_fit(339, 392, 0.88), exp_fit(4144, 1428, 0.41)
    assert unigp.return_level(week3, ReturnLevelQuery(0.9, 1)) == pytest.approx(1192, abs=1)
    assert unigp.return_level(week3, ReturnLevelQuery(0.99, 10)) == pytest.approx(2994, abs=2)
    assert unigp.return_level(size, ReturnLevelQuery(0.9, 10)) == pytest.approx(9385, abs=10)


def test_return_level_below_threshold_rejected():
    with pytest.raises(DomainError):
        unigp.return_level(exp_fit(0, 1, 0.01), ReturnLevelQuery(0.5, 1))


def test_qq_plot():
    pairs = unigp.qq_plot_data([3, 1, 2], exp_fit(0, 2, 1))
    np.testing.assert_allclose([p[0] for p in pairs], [-2 * math.log(1 - i / 4) for i in (1, 2, 3)])
    assert [p[1] for p in pairs] == [1, 2, 3]
    assert unigp.qq_plot_data([], exp_fit(0, 2, 1)) == []


def test_qq_exponential_sample_near_diagonal():
    x = np.random.default_rng(0).exponential(5.0, 5000)
    pairs = np.array(unigp.qq_plot_data(x, unigp.fit_exponential(x)))
    mid = pairs[(pairs[:, 0] > 1) & (pairs[:, 0] < 15)]
    np.testing.assert_allclose(mid[:, 1], mid[:, 0], rtol=0.08)


def test_threshold_fit_counts_strict_excesses():
    fit = unigp.threshold_fit([1, 2, 3, 10, 12], 3)
    assert fit.n_excess == 2 and fit.exceed_freq == pytest.approx(0.4) and fit.sigma == 8


def test_fit_dict_round_trip():
    fit = unigp.fit_exponential([1.0, 2.0, 5.0], 10, 0.3)
    assert UnivariateGpFit.from_dict(fit.to_dict()) == fit
