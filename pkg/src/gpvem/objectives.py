"""Learning objectives on the full model: the ELBO and the EP energy.

Both are functions of (prior, sites, data) and bound or approximate the log
marginal likelihood. At Gaussian-likelihood sites they coincide with the
closed-form log marginal; for n = 1 the EP energy is exact for every
likelihood, which the test suite uses as its brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import CavityCollapseError, NonGaussianSiteError
from .kernels import GramMatrix, KernelParams, gram
from .likelihoods import DEFAULT_RULE, Likelihood
from .sites import DualSites, _pieces, site_gaussian

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ObjectiveValue:
    """Objective value in nats plus per-datum contributions where defined."""

    value: float
    per_point: np.ndarray | None = None
    diverged: bool = False


def elbo(
    gram_matrix: GramMatrix,
    sites: DualSites,
    y: np.ndarray,
    lik: Likelihood,
    rule=DEFAULT_RULE,
) -> ObjectiveValue:
    """Evidence lower bound: sum_i E_q[log p(y_i|f_i)] - KL[q || prior]."""
    pieces = _pieces(gram_matrix, sites)
    mean, var = pieces.marginals(sites.lambda1)
    exp_ll, _, _ = lik.expected_log_lik(y, mean, var, rule)
    cov = pieces.covariance()
    chol_s = _chol_psd(cov)
    n = gram_matrix.n
    kinv_s = gram_matrix.solve(cov)
    kinv_m = gram_matrix.solve(mean)
    kl = 0.5 * (
        np.trace(kinv_s)
        + mean @ kinv_m
        - n
        + gram_matrix.logdet()
        - 2.0 * np.sum(np.log(np.diag(chol_s)))
    )
    return ObjectiveValue(value=float(np.sum(exp_ll) - kl), per_point=exp_ll)


def _chol_psd(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(a + 1e-12 * np.eye(a.shape[0]))


def cavity_marginals(mean, var, site_mean, site_var):
    """Delete each site from its own marginal: returns (cav_mean, cav_var).

    Raises CavityCollapseError (with the first offending index) when a cavity
    precision is non-positive, signalling a site stronger than its marginal.
    """
    cav_prec = 1.0 / var - 1.0 / site_var
    bad = np.nonzero(cav_prec <= 0)[0]
    if bad.size:
        raise CavityCollapseError(
            f"non-positive cavity variance at index {bad[0]}", index=int(bad[0])
        )
    cav_var = 1.0 / cav_prec
    cav_mean = cav_var * (mean / var - site_mean / site_var)
    return cav_mean, cav_var


def ep_energy(
    gram_matrix: GramMatrix,
    sites: DualSites,
    y: np.ndarray,
    lik: Likelihood,
    rule=DEFAULT_RULE,
) -> ObjectiveValue:
    """EP approximation of the log marginal likelihood at the supplied sites.

    value = -1/2 log|K + Sigma~| - 1/2 mu~^T (K + Sigma~)^-1 mu~
            + sum_i [ logZ_tilted,i + 1/2 log(s_cav,i + s~_i)
                      + (m_cav,i - mu~_i)^2 / (2 (s_cav,i + s~_i)) ]

    with (mu~, s~) the site-Gaussian form and the cavities taken from the
    current posterior marginals. Works for arbitrary site values, which is
    what makes it usable as an M-step objective for VI duals.
    """
    if np.any(sites.lambda2 >= 0):
        raise NonGaussianSiteError("ep_energy requires all lambda2 < 0")
    site_mean, site_var = site_gaussian(sites.lambda1, sites.lambda2)
    pieces = _pieces(gram_matrix, sites)
    mean, var = pieces.marginals(sites.lambda1)
    cav_mean, cav_var = cavity_marginals(mean, var, site_mean, site_var)
    log_z, _, _ = lik.tilted_moments(y, cav_mean, cav_var, rule)

    # log|K + Sigma~| = sum_i log s~_i + log|B| keeps huge weak-site variances stable
    logdet = float(np.sum(np.log(site_var)) + pieces.logdet_b())
    quad = float(site_mean @ pieces.inv_k_plus_site_cov(site_mean))
    total_var = cav_var + site_var
    per_point = log_z + 0.5 * np.log(total_var) + (cav_mean - site_mean) ** 2 / (
        2.0 * total_var
    )
    value = -0.5 * logdet - 0.5 * quad + float(np.sum(per_point))
    return ObjectiveValue(value=value, per_point=per_point)


OBJECTIVES: dict[str, Callable] = {"elbo": elbo, "ep_energy": ep_energy}


def pack_theta(params: KernelParams, lik: Likelihood) -> np.ndarray:
    """Flat log-hyperparameter vector: kernel hypers then trainable likelihood hypers."""
    return np.concatenate([params.theta(), lik.hyper_vector()])


def unpack_theta(theta: np.ndarray, params: KernelParams, lik: Likelihood):
    """Rebuild (KernelParams, Likelihood) from a flat vector shaped like pack_theta."""
    k = params.n_hypers
    new_params = KernelParams.from_theta(theta[:k])
    new_lik = lik.with_hypers(theta[k:]) if len(theta) > k else lik.copy()
    return new_params, new_lik


def objective_at_theta(
    objective: Callable,
    theta: np.ndarray,
    x: np.ndarray,
    params: KernelParams,
    lik: Likelihood,
    sites: DualSites,
    y: np.ndarray,
    rule=DEFAULT_RULE,
    base_jitter: float = 1e-8,
) -> float:
    """Evaluate an objective after moving the hyperparameters to ``theta``."""
    new_params, new_lik = unpack_theta(theta, params, lik)
    k = gram(x, new_params, base_jitter)
    return objective(k, sites, y, new_lik, rule).value


def objective_grad_theta(
    objective: Callable,
    x: np.ndarray,
    params: KernelParams,
    lik: Likelihood,
    sites: DualSites,
    y: np.ndarray,
    rule=DEFAULT_RULE,
    step: float = 1e-5,
    base_jitter: float = 1e-8,
) -> np.ndarray:
    """Hyperparameter gradient of an objective at fixed sites.

    Central finite differences over the (small) log-hyperparameter vector;
    the dimension is at most d + 2 in the experiments this serves.
    """
    theta = pack_theta(params, lik)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        theta_hi = theta.copy()
        theta_lo = theta.copy()
        theta_hi[j] += step
        theta_lo[j] -= step
        hi = objective_at_theta(objective, theta_hi, x, params, lik, sites, y, rule, base_jitter)
        lo = objective_at_theta(objective, theta_lo, x, params, lik, sites, y, rule, base_jitter)
        grad[j] = (hi - lo) / (2.0 * step)
    return grad


def gaussian_log_marginal(gram_matrix: GramMatrix, y: np.ndarray, noise_variance: float) -> float:
    """Closed-form log N(y; 0, K + sigma_n^2 I), the conjugate reference value."""
    n = gram_matrix.n
    c = gram_matrix.values + noise_variance * np.eye(n)
    chol = np.linalg.cholesky(c)
    alpha = scipy.linalg.cho_solve((chol, True), y)
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * LOG_2PI
    )
