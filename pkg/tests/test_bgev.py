import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from precipgam import bgev


def draws(rng, n):
    return zip(rng.uniform(-5, 50, n), np.exp(rng.uniform(-2, 3, n)), rng.uniform(0, 0.49, n))


def test_matches_scipy_gev_in_the_right_tail():
    d = bgev.BGEV(10.0, 4.0, 0.2)
    x = np.linspace(float(d.b) + 0.01, 60, 50)
    # scipy's genextreme uses c = -xi
    ref = stats.genextreme(-0.2, loc=d.mu, scale=d.sigma)
    np.testing.assert_allclose(d.cdf(x), ref.cdf(x), rtol=1e-12)
    np.testing.assert_allclose(d.logpdf(x), ref.logpdf(x), rtol=1e-10)


def test_gumbel_left_tail_and_matching_points():
    d = bgev.BGEV(3.0, 2.0, 0.3)
    assert d.cdf(d.a) == pytest.approx(bgev.P_A, rel=1e-12)
    assert d.cdf(d.b) == pytest.approx(bgev.P_B, rel=1e-12)
    x = np.linspace(float(d.a) - 10, float(d.a) - 0.01, 20)
    np.testing.assert_allclose(d.cdf(x), stats.gumbel_r(d.g_mu, d.g_sigma).cdf(x), rtol=1e-12)


def test_quantile_parametrisation():
    rng = np.random.default_rng(0)
    for mu, s, xi in draws(rng, 50):
        d = bgev.BGEV(mu, s, xi)
        assert d.quantile(bgev.ALPHA) == pytest.approx(mu, abs=1e-10)
        q_hi, q_lo = d.quantile(1 - bgev.BETA / 2), d.quantile(bgev.BETA / 2)
        assert q_hi - q_lo == pytest.approx(s, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(-10, 30), log_s=st.floats(-2, 2), xi=st.floats(0, 0.45))
def test_density_integrates_to_one(mu, log_s, xi):
    d = bgev.BGEV(mu, np.exp(log_s), xi)
    lo, hi = d.quantile(1e-12), d.quantile(1 - 1e-9)
    knots = [float(d.a), float(d.b)]
    total = integrate.quad(lambda x: float(d.pdf(x)), lo, hi, points=knots, limit=200)[0]
    assert total == pytest.approx(1 - 1e-9 - 1e-12, abs=1e-7)


def test_cdf_monotone_and_roundtrip_vectorised():
    rng = np.random.default_rng(1)
    mu, s = rng.uniform(0, 20, 200), np.exp(rng.uniform(-1, 2, 200))
    d = bgev.BGEV(mu, s, 0.15)
    p = rng.uniform(0.001, 0.999, 200)
    np.testing.assert_allclose(d.cdf(d.quantile(p)), p, atol=1e-10)


def test_x_derivatives_against_finite_differences():
    rng = np.random.default_rng(2)
    for mu, s, xi in list(draws(rng, 20)) + [(0.0, 1.0, 0.0)]:
        d = bgev.BGEV(mu, s, xi)
        x = d.quantile(rng.uniform(0.01, 0.99, 25))
        g, h = d.dlogpdf_dx(x)
        eps = 1e-5 * s
        np.testing.assert_allclose(g, (d.logpdf(x + eps) - d.logpdf(x - eps)) / (2 * eps),
                                   rtol=1e-5, atol=1e-6 / s)
        gp, _ = d.dlogpdf_dx(x + eps)
        gm, _ = d.dlogpdf_dx(x - eps)
        np.testing.assert_allclose(h, (gp - gm) / (2 * eps), rtol=1e-5, atol=1e-6 / s ** 2)


def test_return_levels():
    rl20 = bgev.return_level(10.0, 3.0, 0.1, 20)
    assert rl20 == pytest.approx(bgev.BGEV(10.0, 3.0, 0.1).quantile(0.95), rel=1e-14)
    assert rl20 > bgev.return_level(10.0, 3.0, 0.1, 10)
    with pytest.raises(ValueError):
        bgev.return_level(10.0, 3.0, 0.1, 1.0)


def test_xi_zero_limit_is_continuous():
    a, b = bgev.BGEV(5.0, 2.0, 0.0), bgev.BGEV(5.0, 2.0, 1e-9)
    x = np.linspace(0, 20, 30)
    np.testing.assert_allclose(a.logpdf(x), b.logpdf(x), rtol=1e-7, atol=1e-7)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        bgev.BGEV(0.0, -1.0, 0.1)
    with pytest.raises(ValueError):
        bgev.BGEV(0.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        bgev.BGEV(0.0, 1.0, 0.1, p_a=0.3, p_b=0.2)
