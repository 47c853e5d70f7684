"""Per-datapoint natural site parameters and the Gaussian posterior they induce.

The approximate posterior is prior x product of sites, with each site an
unnormalized Gaussian exp(lambda1 f + lambda2 f^2). With W = -2 lambda2 the
posterior is N(m, S), S = (K^-1 + diag(W))^-1, m = S lambda1 (zero prior mean).
Assembly goes through B = I + W^1/2 K W^1/2 for conditioning robustness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonGaussianSiteError, PosteriorCollapseError
from .kernels import GramMatrix, KernelParams, cross_gram, kernel_diag, stabilized_cholesky

#: sites are clamped to lambda2 <= -LAMBDA2_FLOOR after every update so the
#: posterior precision stays positive definite for any kernel
LAMBDA2_FLOOR = 1e-10


@dataclass
class DualSites:
    """First and second natural parameters of the n per-datapoint sites."""

    lambda1: np.ndarray
    lambda2: np.ndarray

    def __post_init__(self):
        self.lambda1 = np.asarray(self.lambda1, dtype=float)
        self.lambda2 = np.asarray(self.lambda2, dtype=float)
        if self.lambda1.shape != self.lambda2.shape:
            raise ValueError("lambda1 and lambda2 must have the same shape")
        if not (np.all(np.isfinite(self.lambda1)) and np.all(np.isfinite(self.lambda2))):
            raise ValueError("site parameters must be finite")

    @property
    def n(self) -> int:
        return self.lambda1.size

    def copy(self) -> "DualSites":
        return DualSites(self.lambda1.copy(), self.lambda2.copy())

    @classmethod
    def near_prior(cls, n: int) -> "DualSites":
        """Initialization at lambda1 = 0, lambda2 = -floor: posterior ~= prior."""
        return cls(np.zeros(n), np.full(n, -LAMBDA2_FLOOR))


def crop_lambda2(lambda2: np.ndarray) -> np.ndarray:
    """Project the second natural parameter onto lambda2 <= -floor."""
    return np.minimum(lambda2, -LAMBDA2_FLOOR)


@dataclass
class GaussianPosterior:
    """Mean, covariance, and cached Cholesky factor of a Gaussian posterior."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    @property
    def marginal_vars(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def site_gaussian(lambda1, lambda2):
    """Convert natural site parameters to (site_mean, site_var).

    site_var = -1 / (2 lambda2), site_mean = -lambda1 / (2 lambda2); the exact
    inverse of the natural parameterization of an unnormalized Gaussian.
    """
    lambda1 = np.asarray(lambda1, dtype=float)
    lambda2 = np.asarray(lambda2, dtype=float)
    if np.any(lambda2 >= 0):
        raise NonGaussianSiteError("site with lambda2 >= 0 has no Gaussian form")
    site_var = -0.5 / lambda2
    site_mean = lambda1 * site_var
    return site_mean, site_var


def site_natural(site_mean, site_var):
    """Inverse of :func:`site_gaussian`."""
    site_mean = np.asarray(site_mean, dtype=float)
    site_var = np.asarray(site_var, dtype=float)
    lambda2 = -0.5 / site_var
    lambda1 = site_mean / site_var
    return lambda1, lambda2


class _PosteriorPieces:
    """Shared factorizations for posterior assembly, marginals, and prediction.

    Valid for W > 0 elementwise; callers fall back to the explicit-precision
    route otherwise.
    """

    def __init__(self, gram: GramMatrix, w: np.ndarray):
        self.gram = gram
        self.w = w
        self.sqrt_w = np.sqrt(w)
        n = gram.n
        b = np.eye(n) + self.sqrt_w[:, None] * gram.values * self.sqrt_w[None, :]
        self.chol_b = np.linalg.cholesky(0.5 * (b + b.T))
        # V = L_B^-1 W^1/2 K, so S = K - V^T V
        self.v = scipy.linalg.solve_triangular(
            self.chol_b, self.sqrt_w[:, None] * gram.values, lower=True
        )

    def logdet_b(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol_b))))

    def covariance(self) -> np.ndarray:
        s = self.gram.values - self.v.T @ self.v
        return 0.5 * (s + s.T)

    def mean(self, lambda1: np.ndarray) -> np.ndarray:
        k_l = self.gram.values @ lambda1
        u = scipy.linalg.solve_triangular(self.chol_b, self.sqrt_w * k_l, lower=True)
        return k_l - self.v.T @ u

    def marginals(self, lambda1: np.ndarray):
        var = np.diag(self.gram.values) - np.sum(self.v**2, axis=0)
        return self.mean(lambda1), var

    def inv_k_plus_site_cov(self, rhs: np.ndarray) -> np.ndarray:
        """(K + diag(1/W))^-1 rhs = W^1/2 B^-1 W^1/2 rhs."""
        half = scipy.linalg.cho_solve((self.chol_b, True), self.sqrt_w * rhs)
        return self.sqrt_w * half


def _pieces(gram: GramMatrix, sites: DualSites) -> _PosteriorPieces:
    w = -2.0 * sites.lambda2
    if np.any(w <= 0):
        raise NonGaussianSiteError("posterior pieces need all lambda2 < 0")
    return _PosteriorPieces(gram, w)


def posterior_from_sites(gram: GramMatrix, sites: DualSites) -> GaussianPosterior:
    """Assemble q(f) = N(m, S) from the prior and the sites.

    Uses the symmetrized W^1/2 route when all lambda2 < 0; otherwise falls
    back to factorizing the explicit precision K^-1 + diag(-2 lambda2), which
    only requires the total precision to be positive definite.
    """
    w = -2.0 * sites.lambda2
    if np.all(w > 0):
        pieces = _PosteriorPieces(gram, w)
        cov = pieces.covariance()
        mean = pieces.mean(sites.lambda1)
    else:
        prec = gram.solve(np.eye(gram.n)) + np.diag(w)
        prec = 0.5 * (prec + prec.T)
        try:
            chol_prec = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise PosteriorCollapseError(
                "posterior precision is not positive definite"
            ) from None
        cov = scipy.linalg.cho_solve((chol_prec, True), np.eye(gram.n))
        cov = 0.5 * (cov + cov.T)
        mean = cov @ sites.lambda1
    try:
        chol, _ = stabilized_cholesky(cov, base_jitter=1e-12)
    except Exception as exc:
        raise PosteriorCollapseError(f"posterior covariance not PD: {exc}") from None
    return GaussianPosterior(mean=mean, cov=cov, chol=chol)


def posterior_marginals(gram: GramMatrix, sites: DualSites):
    """Per-point posterior (mean, variance) without forming the full covariance."""
    pieces = _pieces(gram, sites)
    return pieces.marginals(sites.lambda1)


def predict(
    gram: GramMatrix,
    x: np.ndarray,
    sites: DualSites,
    params: KernelParams,
    xstar: np.ndarray,
):
    """Latent predictive (mean, var) at test inputs under the site posterior.

    mean* = k*^T (I + W K)^-1 lambda1 and var* = k** - k*^T (K + Sigma~)^-1 k*,
    the standard Gaussian conditional written in site form.
    """
    pieces = _pieces(gram, sites)
    alpha = sites.lambda1 - pieces.inv_k_plus_site_cov(gram.values @ sites.lambda1)
    kstar = cross_gram(np.atleast_2d(x), np.atleast_2d(xstar), params)
    fmean = kstar.T @ alpha
    half = scipy.linalg.solve_triangular(
        pieces.chol_b, pieces.sqrt_w[:, None] * kstar, lower=True
    )
    fvar = kernel_diag(xstar, params) - np.sum(half**2, axis=0)
    return fmean, np.maximum(fvar, 1e-300)


def predictive_log_density(lik, ystar, fmean, fvar, rule=None):
    """log int p(y*|f) N(f; fmean, fvar) df, the held-out scoring metric."""
    fvar = np.asarray(fvar, dtype=float)
    if np.any(fvar <= 0):
        raise ValueError("predictive variance must be positive")
    if rule is None:
        return lik.predictive_log_density(ystar, fmean, fvar)
    return lik.predictive_log_density(ystar, fmean, fvar, rule)
