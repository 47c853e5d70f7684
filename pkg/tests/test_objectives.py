import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from conftest import integrate_against_gaussian, random_problem
from gpvem.errors import CavityCollapseError, NonGaussianSiteError
from gpvem.kernels import KernelParams, cross_gram, gram, gram_grad
from gpvem.likelihoods import BernoulliProbit, Gaussian, QuadratureRule, StudentT
from gpvem.objectives import (
    cavity_marginals,
    elbo,
    ep_energy,
    gaussian_log_marginal,
    objective_at_theta,
    objective_grad_theta,
    pack_theta,
    unpack_theta,
)
from gpvem.sites import DualSites

RULE = QuadratureRule.gauss_hermite(20)


def exact_gaussian_sites(n, y, s2):
    return DualSites(y / s2, np.full(n, -0.5 / s2))


class TestElbo:
    def test_tight_at_exact_conjugate_posterior(self, rng):
        _, x, params, k = random_problem(0, n_max=20)
        s2 = 0.3
        y = rng.normal(size=k.n)
        value = elbo(k, exact_gaussian_sites(k.n, y, s2), y, Gaussian(np.log(s2)), RULE).value
        assert value == pytest.approx(gaussian_log_marginal(k, y, s2), abs=1e-8)

    def test_lower_bound_for_arbitrary_sites(self):
        for seed in range(6):
            rng, x, params, k = random_problem(seed, n_max=15)
            s2 = 0.5
            y = rng.normal(size=k.n)
            sites = DualSites(rng.normal(size=k.n), -rng.uniform(0.05, 3.0, size=k.n))
            value = elbo(k, sites, y, Gaussian(np.log(s2)), RULE).value
            assert value <= gaussian_log_marginal(k, y, s2) + 1e-10

    def test_scalar_probit_brute_force(self):
        k = gram(np.zeros((1, 1)), KernelParams(np.log([1.0]), np.log(1.6)), base_jitter=1e-12)
        sites = DualSites(np.array([0.6]), np.array([-0.4]))
        lik = BernoulliProbit()
        value = elbo(k, sites, np.array([1.0]), lik, QuadratureRule.gauss_hermite(80)).value
        # brute force both ELBO terms on the 1-D posterior
        kv = k.values[0, 0]
        s = 1.0 / (1.0 / kv + 0.8)
        m = s * 0.6
        e_term = integrate_against_gaussian(lambda f: norm.logcdf(f), m, s)
        kl = 0.5 * (s / kv + m**2 / kv - 1.0 + np.log(kv) - np.log(s))
        assert value == pytest.approx(e_term - kl, abs=1e-7)


class TestEpEnergy:
    def test_exact_at_conjugate_sites(self, rng):
        _, x, params, k = random_problem(1, n_max=20)
        s2 = 0.4
        y = rng.normal(size=k.n)
        value = ep_energy(k, exact_gaussian_sites(k.n, y, s2), y, Gaussian(np.log(s2)), RULE).value
        assert value == pytest.approx(gaussian_log_marginal(k, y, s2), abs=1e-8)

    @pytest.mark.parametrize(
        "lik,y",
        [
            (BernoulliProbit(), 1.0),
            (Gaussian(np.log(0.5)), 0.8),
            (StudentT(3.0, np.log(0.7)), -0.9),
        ],
    )
    def test_single_site_energy_is_exact(self, lik, y):
        # EP energy with one site is the true log marginal for ANY valid site
        k = gram(np.zeros((1, 1)), KernelParams(np.log([1.0]), np.log(2.0)), base_jitter=1e-12)
        rule = QuadratureRule.gauss_hermite(200)
        truth = np.log(
            integrate_against_gaussian(
                lambda f: np.exp(lik.log_density(y, f)), 0.0, k.values[0, 0]
            )
        )
        for l1, l2 in [(0.0, -1e-10), (0.4, -0.3), (-1.2, -2.0)]:
            sites = DualSites(np.array([l1]), np.array([l2]))
            value = ep_energy(k, sites, np.array([y]), lik, rule).value
            assert value == pytest.approx(truth, abs=1e-6)

    def test_requires_negative_lambda2(self, rng):
        _, x, params, k = random_problem(2, n_max=6)
        sites = DualSites(np.zeros(k.n), np.zeros(k.n))
        with pytest.raises(NonGaussianSiteError):
            ep_energy(k, sites, np.ones(k.n), BernoulliProbit(), RULE)

    def test_cavity_collapse_reports_index(self):
        # site variance below the marginal variance is inconsistent: index flagged
        with pytest.raises(CavityCollapseError) as err:
            cavity_marginals(
                np.array([0.0, 0.0]),
                np.array([1.0, 1.0]),
                np.array([0.0, 0.0]),
                np.array([2.0, 0.5]),
            )
        assert err.value.index == 1

    def test_permutation_invariance(self):
        rng, x, params, k = random_problem(3, n_max=15)
        y = np.asarray(rng.choice([-1.0, 1.0], size=k.n))
        sites = DualSites(rng.normal(size=k.n), -rng.uniform(0.1, 2.0, size=k.n))
        lik = BernoulliProbit()
        base_ep = ep_energy(k, sites, y, lik, RULE).value
        base_elbo = elbo(k, sites, y, lik, RULE).value
        perm = rng.permutation(k.n)
        k_perm = gram(x[perm], params)
        sites_perm = DualSites(sites.lambda1[perm], sites.lambda2[perm])
        assert ep_energy(k_perm, sites_perm, y[perm], lik, RULE).value == pytest.approx(
            base_ep, abs=1e-8
        )
        assert elbo(k_perm, sites_perm, y[perm], lik, RULE).value == pytest.approx(
            base_elbo, abs=1e-8
        )


class TestConjugateTripleEquality:
    def test_elbo_ep_laplace_and_closed_form_agree(self):
        from gpvem.laplace import laplace_energy, laplace_fit

        for seed in range(5):
            rng, x, params, k = random_problem(seed, n_max=25)
            s2 = rng.uniform(0.2, 0.8)
            y = rng.normal(size=k.n)
            lik = Gaussian(np.log(s2))
            sites = exact_gaussian_sites(k.n, y, s2)
            lm = gaussian_log_marginal(k, y, s2)
            assert elbo(k, sites, y, lik, RULE).value == pytest.approx(lm, abs=1e-8)
            assert ep_energy(k, sites, y, lik, RULE).value == pytest.approx(lm, abs=1e-8)
            fit = laplace_fit(k, y, lik)
            assert laplace_energy(k, fit, y, lik).value == pytest.approx(lm, abs=1e-8)


class TestGradTheta:
    def test_conjugate_gradient_matches_closed_form_differences(self, rng):
        _, x, params, k = random_problem(4, n_max=15)
        s2 = 0.5
        y = rng.normal(size=k.n)
        lik = Gaussian(np.log(s2))
        sites = exact_gaussian_sites(k.n, y, s2)
        grad = objective_grad_theta(ep_energy, x, params, lik, sites, y, RULE)
        # oracle: analytic gradient of log N(y; 0, K + s2 I) in the log-hypers
        theta = pack_theta(params, lik)
        c = k.values + s2 * np.eye(k.n)
        cinv = np.linalg.inv(c)
        alpha = cinv @ y
        kgrads = gram_grad(x, params) + [s2 * np.eye(k.n)]
        for j, dk in enumerate(kgrads):
            analytic = 0.5 * alpha @ dk @ alpha - 0.5 * np.trace(cinv @ dk)
            assert grad[j] == pytest.approx(analytic, rel=1e-4, abs=1e-6)

    def test_elbo_gradient_matches_independent_differences(self, rng):
        _, x, params, k = random_problem(5, n_max=12)
        y = np.asarray(rng.choice([-1.0, 1.0], size=k.n))
        lik = BernoulliProbit()
        sites = DualSites(rng.normal(size=k.n) * 0.5, -rng.uniform(0.2, 1.0, size=k.n))
        grad = objective_grad_theta(elbo, x, params, lik, sites, y, RULE, step=1e-5)
        theta = pack_theta(params, lik)
        step = 1e-4
        for j in range(theta.size):
            hi, lo = theta.copy(), theta.copy()
            hi[j] += step
            lo[j] -= step
            fd = (
                objective_at_theta(elbo, hi, x, params, lik, sites, y, RULE)
                - objective_at_theta(elbo, lo, x, params, lik, sites, y, RULE)
            ) / (2 * step)
            assert grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_nonzero_at_non_stationary_theta(self, rng):
        _, x, params, k = random_problem(6, n_max=10)
        y = np.asarray(rng.choice([-1.0, 1.0], size=k.n))
        sites = DualSites(y * 0.5, -np.full(k.n, 0.5))
        grad = objective_grad_theta(ep_energy, x, params, BernoulliProbit(), sites, y, RULE)
        assert np.linalg.norm(grad) > 1e-4


def test_theta_pack_roundtrip():
    params = KernelParams(np.log([0.5, 1.5]), np.log(2.0))
    lik = StudentT(3.0, np.log(0.7))
    theta = pack_theta(params, lik)
    assert theta.size == 4
    p2, l2 = unpack_theta(theta, params, lik)
    assert np.allclose(p2.theta(), params.theta())
    assert l2.log_scale == pytest.approx(lik.log_scale)
    assert l2.dof == lik.dof
