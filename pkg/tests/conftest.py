"""Shared test helpers: problem generators and brute-force oracles."""

import numpy as np
import pytest
from scipy.integrate import quad

from gpvem.kernels import KernelParams, gram


def random_problem(seed, n_max=50, d_choices=(2, 3), ell_range=(0.4, 1.5),
                   var_range=(0.5, 2.0)):
    """Well-posed random GP instance: inputs, kernel params, jittered Gram."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, n_max + 1))
    d = int(rng.choice(d_choices))
    x = rng.standard_normal((n, d))
    params = KernelParams(
        np.log(rng.uniform(*ell_range, size=1)), np.log(rng.uniform(*var_range))
    )
    return rng, x, params, gram(x, params)


def conjugate_posterior(k_values, y, noise_variance):
    """Closed-form GP regression posterior (mean, cov)."""
    n = k_values.shape[0]
    c = k_values + noise_variance * np.eye(n)
    mean = k_values @ np.linalg.solve(c, y)
    cov = k_values - k_values @ np.linalg.solve(c, k_values)
    return mean, cov


def integrate_against_gaussian(fn, mean, var, lo=-60.0, hi=60.0):
    """Adaptive quadrature of fn(f) * N(f; mean, var); the brute-force oracle."""
    sd = np.sqrt(var)

    def integrand(f):
        return fn(f) * np.exp(-0.5 * (f - mean) ** 2 / var) / (sd * np.sqrt(2 * np.pi))

    value, _ = quad(integrand, mean + lo * sd, mean + hi * sd, limit=300)
    return value


def tilted_oracle(lik, y, cav_mean, cav_var):
    """(logZ, mean, var) of cavity x likelihood by adaptive quadrature."""
    density = lambda f: np.exp(lik.log_density(y, f))
    z = integrate_against_gaussian(density, cav_mean, cav_var)
    m1 = integrate_against_gaussian(lambda f: f * density(f), cav_mean, cav_var) / z
    m2 = integrate_against_gaussian(lambda f: f * f * density(f), cav_mean, cav_var) / z
    return np.log(z), m1, m2 - m1**2


@pytest.fixture
def rng():
    return np.random.default_rng(0)
