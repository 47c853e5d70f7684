import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from conftest import integrate_against_gaussian, tilted_oracle
from gpvem.likelihoods import (
    BernoulliProbit,
    Gaussian,
    QuadratureRule,
    StudentT,
    make_likelihood,
)

# frozen in 40-digit arithmetic
LOG_HALF = -0.6931471805599453
HALF_LOG_2PI = 0.9189385332046727
STUDENT_T3_AT_ZERO = -1.0008888496235097  # log G(2) - log G(1.5) - log(3 pi)/2

RULE = QuadratureRule.gauss_hermite(20)
FINE_RULE = QuadratureRule.gauss_hermite(200)


class TestQuadratureRule:
    def test_weight_normalization(self):
        assert RULE.weights.sum() == pytest.approx(np.sqrt(np.pi), abs=1e-12)
        assert RULE.normalized_weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_degree_39_polynomial_exactness(self):
        # 20 nodes integrate polynomials up to degree 39 against the Gaussian
        mean, var = 0.3, 1.7
        f = mean + np.sqrt(2 * var) * RULE.nodes
        moments = {0: 1.0, 1: mean}
        for k in range(2, 40):
            moments[k] = mean * moments[k - 1] + (k - 1) * var * moments[k - 2]
        for k in (3, 10, 25, 39):
            approx = np.sum(RULE.normalized_weights * f**k)
            assert approx == pytest.approx(moments[k], rel=1e-10)


class TestLogDensity:
    def test_probit_at_zero(self):
        lik = BernoulliProbit()
        assert lik.log_density(1.0, 0.0) == pytest.approx(LOG_HALF, abs=1e-14)
        assert lik.log_density(-1.0, 0.0) == pytest.approx(LOG_HALF, abs=1e-14)

    def test_probit_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            BernoulliProbit().log_density(0.0, 1.0)

    def test_gaussian_at_residual_zero(self):
        lik = Gaussian(log_noise_variance=0.0)
        assert lik.log_density(1.3, 1.3) == pytest.approx(-HALF_LOG_2PI, abs=1e-14)

    def test_student_t_normalizer(self):
        lik = StudentT(dof=3.0, log_scale=0.0)
        assert lik.log_density(0.5, 0.5) == pytest.approx(STUDENT_T3_AT_ZERO, abs=1e-12)

    def test_student_t_requires_positive_dof(self):
        with pytest.raises(ValueError):
            StudentT(dof=-1.0)

    def test_make_likelihood(self):
        assert isinstance(make_likelihood("bernoulli_probit"), BernoulliProbit)
        assert isinstance(make_likelihood("gaussian"), Gaussian)
        assert make_likelihood("student_t", dof=3.0).dof == 3.0
        with pytest.raises(Exception):
            make_likelihood("poisson")


class TestLogDensityGrads:
    @pytest.mark.parametrize(
        "lik,y",
        [
            (BernoulliProbit(), 1.0),
            (BernoulliProbit(), -1.0),
            (Gaussian(np.log(0.3)), 0.7),
            (StudentT(3.0, np.log(0.6)), -0.4),
        ],
    )
    def test_derivatives_match_finite_differences(self, lik, y):
        for f in (-8.0, -1.1, 0.0, 0.9, 6.0):
            _, d1, d2 = lik.log_density_grads(y, f)
            step = 1e-6
            fd1 = (lik.log_density(y, f + step) - lik.log_density(y, f - step)) / (2 * step)
            step = 1e-4  # second difference needs a larger step against roundoff
            fd2 = (
                lik.log_density(y, f + step)
                - 2 * lik.log_density(y, f)
                + lik.log_density(y, f - step)
            ) / step**2
            assert d1 == pytest.approx(fd1, rel=1e-6, abs=1e-7)
            assert d2 == pytest.approx(fd2, rel=1e-5, abs=1e-6)


class TestExpectedLogLik:
    def test_gaussian_matches_quadrature(self, rng):
        lik = Gaussian(np.log(0.4))
        for _ in range(10):
            y, m, v = rng.normal(), rng.normal(), rng.uniform(0.1, 3.0)
            value, _, _ = lik.expected_log_lik(y, m, v, RULE)
            f = m + np.sqrt(2 * v) * RULE.nodes
            quad_value = np.sum(RULE.normalized_weights * lik.log_density(y, f))
            assert value == pytest.approx(quad_value, abs=1e-10)

    def test_probit_matches_adaptive_integration(self):
        lik = BernoulliProbit()
        value, _, _ = lik.expected_log_lik(1.0, 0.0, 1.0, RULE)
        truth = integrate_against_gaussian(lambda f: norm.logcdf(f), 0.0, 1.0)
        assert value == pytest.approx(truth, abs=1e-8)

    @pytest.mark.parametrize(
        "lik", [BernoulliProbit(), Gaussian(np.log(0.5)), StudentT(3.0, np.log(0.8))]
    )
    def test_derivatives_match_finite_differences(self, lik, rng):
        step = 1e-5
        for _ in range(8):
            y = rng.choice([-1.0, 1.0]) if isinstance(lik, BernoulliProbit) else rng.normal()
            m, v = rng.normal(), rng.uniform(0.3, 2.0)
            _, d_dm, d_dv = lik.expected_log_lik(y, m, v, FINE_RULE)
            up, _, _ = lik.expected_log_lik(y, m + step, v, FINE_RULE)
            dn, _, _ = lik.expected_log_lik(y, m - step, v, FINE_RULE)
            assert d_dm == pytest.approx((up - dn) / (2 * step), rel=1e-4, abs=1e-6)
            up, _, _ = lik.expected_log_lik(y, m, v + step, FINE_RULE)
            dn, _, _ = lik.expected_log_lik(y, m, v - step, FINE_RULE)
            assert d_dv == pytest.approx((up - dn) / (2 * step), rel=1e-4, abs=1e-6)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            Gaussian(0.0).expected_log_lik(0.0, 0.0, -1.0, RULE)


class TestDualGradient:
    def test_gaussian_is_state_independent(self, rng):
        s2 = 0.7
        lik = Gaussian(np.log(s2))
        y = 1.9
        for _ in range(5):
            m, v = rng.normal(), rng.uniform(0.2, 4.0)
            l1, l2 = lik.dual_gradient(y, m, v, RULE)
            assert l1 == pytest.approx(y / s2, abs=1e-12)
            assert l2 == pytest.approx(-0.5 / s2, abs=1e-12)

    def test_probit_matches_expectation_parameter_differences(self):
        lik = BernoulliProbit()
        m, v = 0.0, 1.0
        l1, l2 = lik.dual_gradient(1.0, m, v, FINE_RULE)
        # numerical gradient in expectation parameters (mu1, mu2) = (m, v + m^2)
        step = 1e-5

        def e_of_mu(mu1, mu2):
            value, _, _ = lik.expected_log_lik(1.0, mu1, mu2 - mu1**2, FINE_RULE)
            return value

        mu1, mu2 = m, v + m**2
        fd1 = (e_of_mu(mu1 + step, mu2) - e_of_mu(mu1 - step, mu2)) / (2 * step)
        fd2 = (e_of_mu(mu1, mu2 + step) - e_of_mu(mu1, mu2 - step)) / (2 * step)
        assert l1 == pytest.approx(fd1, rel=1e-5, abs=1e-7)
        assert l2 == pytest.approx(fd2, rel=1e-5, abs=1e-7)

    def test_probit_second_natural_always_negative(self, rng):
        lik = BernoulliProbit()
        for _ in range(50):
            y = rng.choice([-1.0, 1.0])
            m, v = rng.normal() * 2, rng.uniform(0.05, 5.0)
            _, l2 = lik.dual_gradient(y, m, v, RULE)
            assert l2 < 0

    def test_student_t_can_go_nonnegative_uncropped(self):
        # far residual with tight posterior: non-log-concave regime
        lik = StudentT(3.0, 0.0)
        _, l2 = lik.dual_gradient(10.0, 0.0, 0.1, FINE_RULE)
        assert l2 >= 0


class TestTiltedMoments:
    def test_gaussian_convolution_identity(self, rng):
        s2 = 0.6
        lik = Gaussian(np.log(s2))
        for _ in range(5):
            y, cm, cv = rng.normal(), rng.normal(), rng.uniform(0.2, 2.0)
            log_z, t_mean, t_var = lik.tilted_moments(y, cm, cv, RULE)
            assert log_z == pytest.approx(norm.logpdf(y, cm, np.sqrt(cv + s2)), abs=1e-12)
            expect_var = 1 / (1 / cv + 1 / s2)
            assert t_var == pytest.approx(expect_var, abs=1e-12)
            assert t_mean == pytest.approx(expect_var * (cm / cv + y / s2), abs=1e-12)

    def test_probit_matches_integration_oracle(self, rng):
        lik = BernoulliProbit()
        for _ in range(10):
            y = rng.choice([-1.0, 1.0])
            cm, cv = rng.normal(), rng.uniform(0.2, 3.0)
            log_z, t_mean, t_var = lik.tilted_moments(y, cm, cv, RULE)
            assert log_z == pytest.approx(
                norm.logcdf(y * cm / np.sqrt(1 + cv)), abs=1e-12
            )
            oz, om, ov = tilted_oracle(lik, y, cm, cv)
            assert log_z == pytest.approx(oz, abs=1e-8)
            assert t_mean == pytest.approx(om, abs=1e-7)
            assert t_var == pytest.approx(ov, abs=1e-7)

    def test_student_t_moments_against_adaptive_integration(self, rng):
        lik = StudentT(3.0, 0.0)
        rule = QuadratureRule.gauss_hermite(350)
        for _ in range(6):
            y, cm, cv = rng.uniform(-3, 3), rng.uniform(-2, 2), np.exp(rng.uniform(-1, 2))
            log_z, t_mean, t_var = lik.tilted_moments(y, cm, cv, rule)
            oz, om, ov = tilted_oracle(lik, y, cm, cv)
            assert log_z == pytest.approx(oz, abs=1e-7)
            assert t_mean == pytest.approx(om, abs=1e-7)
            assert t_var == pytest.approx(ov, abs=1e-7)

    @pytest.mark.parametrize(
        "lik", [BernoulliProbit(), Gaussian(np.log(0.5)), StudentT(3.0, 0.0)]
    )
    def test_tilted_variance_positive_and_bounded(self, lik, rng):
        for _ in range(20):
            y = rng.choice([-1.0, 1.0]) if isinstance(lik, BernoulliProbit) else rng.normal()
            cm, cv = rng.normal(), rng.uniform(0.2, 3.0)
            _, _, t_var = lik.tilted_moments(y, cm, cv, FINE_RULE)
            assert t_var > 0
            lik_var = {
                BernoulliProbit: 0.0,
                Gaussian: 0.5,
                StudentT: 3.0,  # nu s^2 / (nu - 2) with nu=3, s=1
            }[type(lik)]
            assert t_var < cv + lik_var + 1e-9

    def test_cavity_variance_must_be_positive(self):
        with pytest.raises(ValueError):
            BernoulliProbit().tilted_moments(1.0, 0.0, -0.5, RULE)


class TestLogPartition:
    def test_gaussian_power_one_closed_form(self):
        lik = Gaussian(np.log(0.3))
        lz = lik.log_partition(0.4, 0.1, 0.8, RULE)
        assert lz == pytest.approx(norm.logpdf(0.4, 0.1, np.sqrt(0.8 + 0.3)), abs=1e-12)

    def test_powered_partition_matches_oracle(self):
        lik = StudentT(3.0, 0.0)
        alpha = 0.7
        truth = np.log(
            integrate_against_gaussian(
                lambda f: np.exp(alpha * lik.log_density(0.9, f)), 0.2, 1.1
            )
        )
        lz = lik.log_partition(0.9, 0.2, 1.1, QuadratureRule.gauss_hermite(300), power=alpha)
        assert lz == pytest.approx(truth, abs=1e-8)

    def test_hyper_vector_roundtrip(self):
        lik = StudentT(3.0, np.log(0.5))
        lik2 = lik.with_hypers(np.array([0.25]))
        assert lik2.log_scale == 0.25
        assert lik.log_scale == pytest.approx(np.log(0.5))
        assert BernoulliProbit().hyper_vector().size == 0
