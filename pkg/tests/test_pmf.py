"""Log-pmf kernels: frozen values, reductions, normalization, domain checks.

Non-trivial expected values were computed independently with mpmath at 30
digits and are frozen here to their nearest doubles.
"""

import numpy as np
import pytest

from nmekit.errors import DomainError
from nmekit.pmf import gp_logpmf, poisson_logpmf, zigp_logpmf, zip_logpmf

POIS_3_15 = -2.0753641449035619
POIS_5_5 = -1.7403021806115441
ZIP_0_03_2 = -0.92954138969933079
ZIGP_2_02_1_05 = -2.2231435513142098


class TestPoisson:
    def test_zero_count(self):
        assert poisson_logpmf(0, 2.0) == pytest.approx(-2.0, abs=1e-15)

    def test_frozen_values(self):
        assert poisson_logpmf(3, 1.5) == pytest.approx(POIS_3_15, rel=1e-14)
        assert poisson_logpmf(5, 5.0) == pytest.approx(POIS_5_5, rel=1e-14)

    def test_vectorized(self):
        out = poisson_logpmf(np.array([0, 3, 5]), np.array([2.0, 1.5, 5.0]))
        np.testing.assert_allclose(out, [-2.0, POIS_3_15, POIS_5_5], rtol=1e-14)

    def test_scalar_returns_float(self):
        assert isinstance(poisson_logpmf(1, 1.0), float)

    def test_normalizes(self):
        k = np.arange(0, 400)
        for mu in (0.1, 1.0, 5.0, 20.0):
            total = np.exp(poisson_logpmf(k, mu)).sum()
            assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("k,mu", [(-1, 1.0), (1.5, 1.0), (1, 0.0), (1, -2.0)])
    def test_domain_errors(self, k, mu):
        with pytest.raises(DomainError):
            poisson_logpmf(k, mu)


class TestGeneralizedPoisson:
    def test_zero_count_is_neg_m(self):
        for theta in (-0.3, 0.0, 0.5, 0.9):
            assert gp_logpmf(0, 1.7, theta) == pytest.approx(-1.7, abs=1e-14)

    def test_frozen_value(self):
        # pmf(2; m=1, theta=0.5) = 1 * (1+1)^1 * e^{-2} / 2! = e^{-2}
        assert gp_logpmf(2, 1.0, 0.5) == pytest.approx(-2.0, abs=1e-14)

    def test_theta_zero_reduces_to_poisson(self):
        k = np.arange(0, 51)
        for m in (0.1, 1.0, 5.0, 20.0):
            np.testing.assert_allclose(
                gp_logpmf(k, m, 0.0), poisson_logpmf(k, m), atol=1e-12, rtol=0
            )

    def test_negative_theta_truncates_support(self):
        # m + theta*k <= 0 gets probability zero, with no renormalization.
        m, theta = 1.0, -0.25
        assert np.isneginf(gp_logpmf(10, m, theta))
        k = np.arange(0, 4)  # m + theta*k > 0 only for k <= 3
        mass = np.exp(gp_logpmf(k, m, theta)).sum()
        assert mass < 1.0
        assert mass > 0.9  # deficiency is real but small here

    def test_positive_theta_normalizes(self):
        k = np.arange(0, 2000)
        for theta in (0.25, 0.5):
            for m in (0.5, 2.0, 8.0):
                total = np.exp(gp_logpmf(k, m, theta)).sum()
                assert total == pytest.approx(1.0, abs=1e-6)

    def test_mean_is_m_over_one_minus_theta(self):
        k = np.arange(0, 4000)
        m, theta = 2.0, 0.4
        p = np.exp(gp_logpmf(k, m, theta))
        assert float(p @ k) == pytest.approx(m / (1 - theta), rel=1e-8)

    @pytest.mark.parametrize("theta", [-1.0, 1.0, 1.5])
    def test_theta_domain(self, theta):
        with pytest.raises(DomainError):
            gp_logpmf(1, 1.0, theta)


class TestZip:
    def test_all_structural(self):
        assert zip_logpmf(0, 1.0, 5.0) == pytest.approx(0.0, abs=1e-15)

    def test_no_inflation_reduces_to_poisson(self):
        for k in range(6):
            assert zip_logpmf(k, 0.0, 2.5) == pytest.approx(
                poisson_logpmf(k, 2.5), rel=1e-14
            )

    def test_frozen_zero_value(self):
        assert zip_logpmf(0, 0.3, 2.0) == pytest.approx(ZIP_0_03_2, rel=1e-14)

    def test_positive_count_scales_by_one_minus_pi(self):
        assert zip_logpmf(4, 0.3, 2.0) == pytest.approx(
            np.log(0.7) + poisson_logpmf(4, 2.0), rel=1e-14
        )

    def test_normalizes(self):
        k = np.arange(0, 300)
        for pi in (0.0, 0.2, 0.8):
            for mu in (0.3, 2.0, 9.0):
                total = np.exp(zip_logpmf(k, pi, mu)).sum()
                assert total == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("pi", [-0.1, 1.1])
    def test_pi_domain(self, pi):
        with pytest.raises(DomainError):
            zip_logpmf(0, pi, 1.0)


class TestZigp:
    def test_zero_class_independent_of_theta(self):
        for theta in (-0.2, 0.0, 0.4, 0.8):
            assert zigp_logpmf(0, 0.3, 2.0, theta) == pytest.approx(
                ZIP_0_03_2, rel=1e-14
            )

    def test_theta_zero_reduces_to_zip(self):
        k = np.arange(0, 30)
        np.testing.assert_allclose(
            zigp_logpmf(k, 0.25, 1.7, 0.0),
            zip_logpmf(k, 0.25, 1.7),
            atol=1e-12, rtol=0,
        )

    def test_frozen_value(self):
        assert zigp_logpmf(2, 0.2, 1.0, 0.5) == pytest.approx(
            ZIGP_2_02_1_05, rel=1e-14
        )

    def test_normalizes(self):
        k = np.arange(0, 3000)
        total = np.exp(zigp_logpmf(k, 0.3, 2.0, 0.5)).sum()
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_broadcasting(self):
        k = np.array([0, 1, 2])
        out = zigp_logpmf(k, 0.2, 1.0, 0.5)
        assert out.shape == (3,)
        assert out[2] == pytest.approx(ZIGP_2_02_1_05, rel=1e-14)
