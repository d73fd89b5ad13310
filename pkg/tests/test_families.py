"""Exponential-family log densities against scipy reference densities."""

import numpy as np
import pytest
from scipy import stats

from glmmfactor import BINOMIAL, GAUSSIAN, POISSON, Family, log_density
from glmmfactor.families import FamilyError


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        Family("gamma")


class TestSupport:
    def test_binomial_support(self):
        assert BINOMIAL.in_support(np.array([0.0, 1.0, 1.0]))
        assert not BINOMIAL.in_support(np.array([0.0, 2.0]))
        assert not BINOMIAL.in_support(np.array([0.5]))

    def test_poisson_support(self):
        assert POISSON.in_support(np.array([0.0, 3.0, 17.0]))
        assert not POISSON.in_support(np.array([-1.0]))
        assert not POISSON.in_support(np.array([1.5]))

    def test_gaussian_support_any_finite(self):
        assert GAUSSIAN.in_support(np.array([-3.2, 0.0, 11.7]))
        assert not GAUSSIAN.in_support(np.array([np.nan]))
        assert not GAUSSIAN.in_support(np.array([np.inf]))

    def test_check_support_raises(self):
        with pytest.raises(FamilyError):
            BINOMIAL.check_support(np.array([2.0]))


class TestLogDensity:
    def test_binomial_matches_bernoulli_logpmf(self):
        rng = np.random.default_rng(0)
        eta = rng.normal(0, 2, 50)
        y = (rng.random(50) < 0.5).astype(float)
        p = 1.0 / (1.0 + np.exp(-eta))
        expected = stats.bernoulli.logpmf(y.astype(int), p)
        np.testing.assert_allclose(log_density(BINOMIAL, y, eta), expected,
                                   rtol=1e-12)

    def test_poisson_matches_scipy_logpmf(self):
        rng = np.random.default_rng(1)
        eta = rng.normal(0, 1, 50)
        y = rng.poisson(2.0, 50).astype(float)
        expected = stats.poisson.logpmf(y.astype(int), np.exp(eta))
        np.testing.assert_allclose(log_density(POISSON, y, eta), expected,
                                   rtol=1e-10)

    def test_gaussian_matches_norm_logpdf(self):
        rng = np.random.default_rng(2)
        eta = rng.normal(0, 1, 50)
        y = rng.normal(0, 1, 50)
        tau = 1.7
        expected = stats.norm.logpdf(y, loc=eta, scale=np.sqrt(tau))
        np.testing.assert_allclose(log_density(GAUSSIAN, y, eta, tau),
                                   expected, rtol=1e-12)

    def test_large_eta_stable(self):
        out = log_density(BINOMIAL, np.array([1.0]), np.array([700.0]))
        assert np.isfinite(out).all()
        out = log_density(BINOMIAL, np.array([0.0]), np.array([-700.0]))
        assert np.isfinite(out).all()

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            log_density(GAUSSIAN, np.zeros(3), np.zeros(3), tau=0.0)


class TestCanonicalQuantities:
    @pytest.mark.parametrize("family", [BINOMIAL, POISSON, GAUSSIAN])
    def test_mean_is_cumulant_derivative(self, family):
        eta = np.linspace(-3, 3, 31)
        h = 1e-6
        num = (family.cumulant(eta + h) - family.cumulant(eta - h)) / (2 * h)
        np.testing.assert_allclose(family.mean(eta), num, atol=1e-8)

    @pytest.mark.parametrize("family,mu", [(BINOMIAL, 0.3), (POISSON, 2.5),
                                           (GAUSSIAN, -1.2)])
    def test_mean_link_inverts_mean(self, family, mu):
        eta = family.mean_link(mu)
        assert family.mean(eta) == pytest.approx(mu, rel=1e-9)

    def test_dispersion_flag(self):
        assert GAUSSIAN.dispersion_free
        assert not BINOMIAL.dispersion_free
        assert not POISSON.dispersion_free
