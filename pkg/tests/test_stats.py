import math
import time
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats as sps

from forumcast.errors import SingularDesignError, ValidationError
from forumcast.stats import (
    adf_test,
    betainc_reg,
    f_upper_tail,
    granger_table,
    granger_test,
    inner_join,
    ols,
    roc,
    schwert_lag,
    stars,
)


def f_density(x, d1, d2):
    log_b = math.lgamma(d1 / 2) + math.lgamma(d2 / 2) - math.lgamma((d1 + d2) / 2)
    return math.exp(
        (d1 / 2) * math.log(d1 / d2) + (d1 / 2 - 1) * math.log(x) - ((d1 + d2) / 2) * math.log1p(d1 * x / d2) - log_b
    )


def quad_upper_tail(x, d1, d2):
    # integrate the density directly, mapping [x, inf) onto (0, 1]
    val, _ = integrate.quad(lambda u: f_density(x + u / (1 - u), d1, d2) / (1 - u) ** 2, 0, 1, limit=200)
    return val


def test_roc_examples():
    np.testing.assert_allclose(roc([100, 110]), [10.0])
    np.testing.assert_allclose(roc([100, 50]), [-50.0])
    assert np.all(roc([5, 5, 5, 5]) == 0)


def test_ols_exact_fit_and_hand_case():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    y = X @ np.array([1.0, -2.0, 0.5])
    assert ols(y, X).rss <= 1e-18 * (y @ y)
    fit = ols(np.array([1.0, 2.0, 3.0]), np.ones((3, 1)))
    assert fit.coef[0] == pytest.approx(2.0) and fit.rss == pytest.approx(2.0)


def test_ols_duplicate_column_named():
    X = np.column_stack([np.ones(10), np.arange(10.0), np.arange(10.0)])
    with pytest.raises(SingularDesignError, match="x2") as info:
        ols(np.arange(10.0), X, names=["const", "x1", "x2"])
    assert info.value.column == 2


def test_f_tail_examples():
    assert f_upper_tail(0.0, 3, 7) == 1.0
    assert f_upper_tail(1.0, 1, 1) == pytest.approx(0.5, abs=1e-12)
    assert f_upper_tail(4.102, 2, 10) == pytest.approx(0.05, abs=1e-4)


@pytest.mark.parametrize("d1,d2", [(1, 5), (2, 10), (3, 50), (5, 230), (1, 236)])
@pytest.mark.parametrize("x", [0.05, 0.7, 1.0, 2.5, 7.0, 20.0])
def test_f_tail_matches_quadrature(x, d1, d2):
    assert f_upper_tail(x, d1, d2) == pytest.approx(quad_upper_tail(x, d1, d2), rel=1e-7, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0, max_value=200), st.integers(1, 10), st.integers(1, 300))
def test_f_tail_matches_scipy(x, d1, d2):
    assert f_upper_tail(x, d1, d2) == pytest.approx(sps.f.sf(x, d1, d2), rel=1e-8, abs=1e-13)


@given(st.integers(1, 6), st.integers(2, 80), st.lists(st.floats(0, 50), min_size=2, max_size=10))
def test_f_tail_monotone(d1, d2, xs):
    xs = sorted(xs)
    ps = [f_upper_tail(x, d1, d2) for x in xs]
    assert all(b <= a + 1e-15 for a, b in zip(ps, ps[1:]))
    assert f_upper_tail(1e8, d1, d2) < 1e-6


def test_betainc_bounds():
    assert betainc_reg(2.0, 3.0, 0.0) == 0.0 and betainc_reg(2.0, 3.0, 1.0) == 1.0
    assert betainc_reg(2.0, 3.0, 0.3) == pytest.approx(sps.beta.cdf(0.3, 2.0, 3.0), rel=1e-12)


def _coupled(seed, n=240, coef=0.8):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = np.zeros(n)
    for t in range(1, n):
        y[t] = coef * x[t - 1] + 0.1 * y[t - 1] + 0.1 * rng.normal()
    return y, x


def test_granger_power():
    hits = sum(granger_test(*_coupled(s), lag=1).p_value < 0.01 for s in range(100))
    assert hits >= 95


def test_granger_size():
    rejections = 0
    for s in range(100):
        rng = np.random.default_rng(1000 + s)
        rejections += granger_test(rng.normal(size=240), rng.normal(size=240), 1).p_value < 0.05
    assert 0.01 <= rejections / 100 <= 0.12


def test_granger_matches_statsmodels():
    from statsmodels.tsa.stattools import grangercausalitytests

    y, x = _coupled(3, n=120, coef=0.2)
    ref = grangercausalitytests(np.column_stack([y, x]), maxlag=3)
    for lag in (1, 2, 3):
        res = granger_test(y, x, lag)
        F, p, _, _ = ref[lag][0]["ssr_ftest"]
        assert res.F == pytest.approx(F, rel=1e-9) and res.p_value == pytest.approx(p, rel=1e-7, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_granger_nesting(seed, lag):
    rng = np.random.default_rng(seed)
    y, x = rng.normal(size=60), rng.normal(size=60)
    res = granger_test(y, x, lag)
    assert res.rss_restricted >= res.rss_unrestricted - 1e-12 and res.F >= 0


def test_granger_self_copy_cause():
    y = np.random.default_rng(4).normal(size=80)
    res = granger_test(y, y.copy(), 2)
    assert res.rss_restricted >= res.rss_unrestricted and res.F >= 0


def test_granger_short_series():
    with pytest.raises(ValidationError):
        granger_test(np.zeros(4), np.zeros(4), 2)


def test_stars():
    assert [stars(p) for p in (0.001, 0.02, 0.07, 0.2)] == ["***", "**", "*", ""]


def test_schwert_lag():
    assert schwert_lag(100) == 12 and schwert_lag(250) == 15


def test_adf_matches_statsmodels():
    from statsmodels.tsa.stattools import adfuller

    rng = np.random.default_rng(9)
    for series in (rng.normal(size=250), np.cumsum(rng.normal(size=250))):
        ours = adf_test(series)
        ref = adfuller(series, maxlag=ours.lag_used, autolag=None, regression="c")
        assert ours.t_statistic == pytest.approx(ref[0], rel=1e-10)
        assert ours.n_obs == ref[3]


def test_adf_discrimination():
    white = sum(adf_test(np.random.default_rng(s).standard_normal(250)).reject["5%"] for s in range(100))
    walk = sum(
        not adf_test(np.cumsum(np.random.default_rng(s).standard_normal(250))).reject["5%"] for s in range(100)
    )
    assert white >= 95 and walk >= 90


def test_adf_reject_levels_nested():
    for s in range(30):
        r = adf_test(np.random.default_rng(s).standard_normal(120) * (s % 3 + 1)).reject
        assert r["1%"] <= r["5%"] <= r["10%"]


def test_adf_ramp_is_recorded_not_asserted():
    # a deterministic trend is outside the constant-only specification
    res = adf_test(np.arange(250) / 250 + 1e-3 * np.random.default_rng(0).normal(size=250))
    assert math.isfinite(res.t_statistic)


def test_inner_join_keeps_common_dates():
    d = [date(2024, 1, 1) + timedelta(days=i) for i in range(5)]
    dates, a, b = inner_join(d[1:], [1, 2, 3, 4], d[:4], [10, 20, 30, 40])
    assert dates == d[1:4] and list(a) == [1, 2, 3] and list(b) == [20, 30, 40]


def test_granger_table_layout():
    rng = np.random.default_rng(0)
    d = [date(2024, 1, 1) + timedelta(days=i) for i in range(100)]
    rows = granger_table("S", d[1:], rng.normal(size=99), {"pop_title": (d, rng.normal(size=100))})
    assert len(rows) == 6
    assert list(rows[0]) == ["stock", "variable", "direction", "lag", "F", "p", "stars"]
    assert {r["direction"] for r in rows} == {"pop_title->ROC", "ROC->pop_title"}
