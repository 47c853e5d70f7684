"""Observation models: Bernoulli-probit, Student-t, and Gaussian.

Each likelihood exposes the per-point quantities the inference code needs:

* ``log_density(y, f)`` and its first two derivatives in f,
* ``expected_log_lik(y, mean, var, rule)``: E_{N(f; mean, var)}[log p(y|f)]
  with derivatives w.r.t. mean and var,
* ``dual_gradient(y, mean, var, rule)``: the gradient in the expectation
  parameterization (mu1, mu2) = (m, m^2 + v), i.e. the natural-parameter
  update direction of conjugate-computation VI,
* ``tilted_moments(y, cav_mean, cav_var, rule)``: log-partition, mean and
  variance of cavity x likelihood (the EP moment-matching target),
* ``log_partition(y, mean, var, rule, power)``: log int N(f) p(y|f)^power df.

All methods broadcast over numpy arrays. Expectations fall back to
Gauss-Hermite quadrature where no closed form exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr, logsumexp

from .errors import GpvemError

SQRT_PI = np.sqrt(np.pi)
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes and weights for the physicists' weight exp(-x^2).

    The raw weights sum to sqrt(pi); after the change of variables
    f = mean + sqrt(2 var) x they define a probability measure.
    """

    nodes: np.ndarray
    weights: np.ndarray
    count: int

    @classmethod
    def gauss_hermite(cls, count: int = 20) -> "QuadratureRule":
        nodes, weights = np.polynomial.hermite.hermgauss(count)
        return cls(nodes=nodes, weights=weights, count=count)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / SQRT_PI

    @property
    def log_normalized_weights(self) -> np.ndarray:
        # extreme nodes underflow to weight 0 for large counts; -inf is fine
        # under log-sum-exp
        with np.errstate(divide="ignore"):
            return np.log(self.weights) - 0.5 * np.log(np.pi)


DEFAULT_RULE = QuadratureRule.gauss_hermite(20)


def _check_var(var):
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    return var


def _gh_points(mean, var, rule):
    """Quadrature abscissae f_j = mean + sqrt(2 var) x_j, shape (..., count)."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    return mean[..., None] + np.sqrt(2.0 * var)[..., None] * rule.nodes


class Likelihood:
    """Base class; quadrature fallbacks for every expectation."""

    #: names of trainable log-hyperparameters, in theta order
    trainable = ()

    def log_density(self, y, f):
        raise NotImplementedError

    def log_density_grads(self, y, f):
        """(log p, d log p / df, d^2 log p / df^2), elementwise."""
        raise NotImplementedError

    # -- hyperparameter vector plumbing (used by the M-step) ------------------

    def hyper_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.trainable], dtype=float)

    def with_hypers(self, values: np.ndarray) -> "Likelihood":
        lik = self.copy()
        for name, value in zip(self.trainable, np.atleast_1d(values)):
            setattr(lik, name, float(value))
        return lik

    def copy(self) -> "Likelihood":
        raise NotImplementedError

    # -- expectations ----------------------------------------------------------

    def expected_log_lik(self, y, mean, var, rule=DEFAULT_RULE):
        """E[log p(y|f)] under N(f; mean, var), with d/dmean and d/dvar.

        The derivatives use the Gaussian identities
        dE/dm = E[(f - m) / v * log p] and dE/dv = E[((f-m)^2/v^2 - 1/v)/2 * log p].
        """
        var = _check_var(var)
        mean = np.asarray(mean, dtype=float)
        f = _gh_points(mean, var, rule)
        ll = self.log_density(np.asarray(y, dtype=float)[..., None], f)
        w = rule.normalized_weights
        centered = f - mean[..., None]
        value = np.sum(w * ll, axis=-1)
        d_dmean = np.sum(w * ll * centered, axis=-1) / var
        d_dvar = 0.5 * (
            np.sum(w * ll * centered**2, axis=-1) / var**2 - value / var
        )
        return value, d_dmean, d_dvar

    def dual_gradient(self, y, mean, var, rule=DEFAULT_RULE):
        """Gradient of E[log p] in expectation parameters: lambda1, lambda2.

        With g_m = dE/dmean and g_v = dE/dvar the chain rule from (m, v) to
        (mu1, mu2) = (m, m^2 + v) gives lambda2 = g_v and lambda1 = g_m - 2 m g_v.
        Returned uncropped; clamping lambda2 is the caller's policy.
        """
        _, g_m, g_v = self.expected_log_lik(y, mean, var, rule)
        mean = np.asarray(mean, dtype=float)
        return g_m - 2.0 * mean * g_v, g_v

    def log_partition(self, y, mean, var, rule=DEFAULT_RULE, power: float = 1.0):
        """log int N(f; mean, var) p(y|f)^power df via log-sum-exp quadrature."""
        var = _check_var(var)
        f = _gh_points(mean, var, rule)
        ll = self.log_density(np.asarray(y, dtype=float)[..., None], f)
        logw = rule.log_normalized_weights
        return logsumexp(power * ll + logw, axis=-1)

    def tilted_moments(self, y, cav_mean, cav_var, rule=DEFAULT_RULE):
        """(logZ, mean, var) of the tilted density cavity x likelihood.

        Raises CavityCollapseError upstream semantics: callers must pass a
        positive cavity variance.
        """
        cav_var = _check_var(cav_var)
        cav_mean = np.asarray(cav_mean, dtype=float)
        f = _gh_points(cav_mean, cav_var, rule)
        ll = self.log_density(np.asarray(y, dtype=float)[..., None], f)
        logw = rule.log_normalized_weights
        log_terms = ll + logw
        log_z = logsumexp(log_terms, axis=-1)
        p = np.exp(log_terms - log_z[..., None])
        t_mean = np.sum(p * f, axis=-1)
        t_raw2 = np.sum(p * f**2, axis=-1)
        t_var = np.maximum(t_raw2 - t_mean**2, 1e-300)
        return log_z, t_mean, t_var

    def predictive_log_density(self, y, fmean, fvar, rule=DEFAULT_RULE):
        """log int p(y|f) N(f; fmean, fvar) df for a held-out observation."""
        return self.log_partition(y, fmean, fvar, rule)


class BernoulliProbit(Likelihood):
    """Binary labels in {-1, +1} through the probit link Phi(y f)."""

    trainable = ()

    def copy(self):
        return BernoulliProbit()

    @staticmethod
    def _check_labels(y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("bernoulli_probit labels must be -1 or +1")
        return y

    def log_density(self, y, f):
        y = np.asarray(y, dtype=float)
        if not np.all((np.abs(y) == 1.0) | ~np.isfinite(y)):
            self._check_labels(y)
        return log_ndtr(y * np.asarray(f, dtype=float))

    def log_density_grads(self, y, f):
        y = self._check_labels(y)
        f = np.asarray(f, dtype=float)
        z = y * f
        # ratio phi(z)/Phi(z), stable through the log form for z << 0
        log_ratio = -0.5 * z**2 - 0.5 * LOG_2PI - log_ndtr(z)
        ratio = np.exp(log_ratio)
        d1 = y * ratio
        d2 = -(ratio**2 + z * ratio)
        return log_ndtr(z), d1, d2

    def tilted_moments(self, y, cav_mean, cav_var, rule=DEFAULT_RULE):
        # closed probit form (moment matching against Phi(y m / sqrt(1 + v)))
        cav_var = _check_var(cav_var)
        y = self._check_labels(y)
        cav_mean = np.asarray(cav_mean, dtype=float)
        denom = np.sqrt(1.0 + cav_var)
        z = y * cav_mean / denom
        log_z = log_ndtr(z)
        ratio = np.exp(-0.5 * z**2 - 0.5 * LOG_2PI - log_z)
        t_mean = cav_mean + y * cav_var * ratio / denom
        t_var = cav_var - cav_var**2 * ratio * (z + ratio) / (1.0 + cav_var)
        return log_z, t_mean, np.maximum(t_var, 1e-300)

    def log_partition(self, y, mean, var, rule=DEFAULT_RULE, power: float = 1.0):
        if power == 1.0:
            var = _check_var(var)
            y = self._check_labels(y)
            return log_ndtr(y * np.asarray(mean, dtype=float) / np.sqrt(1.0 + var))
        return super().log_partition(y, mean, var, rule, power)


class Gaussian(Likelihood):
    """Conjugate Gaussian observation noise with trainable log variance."""

    trainable = ("log_noise_variance",)

    def __init__(self, log_noise_variance: float = 0.0):
        self.log_noise_variance = float(log_noise_variance)

    def copy(self):
        return Gaussian(self.log_noise_variance)

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))

    def log_density(self, y, f):
        s2 = self.noise_variance
        r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
        return -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * r**2 / s2

    def log_density_grads(self, y, f):
        s2 = self.noise_variance
        r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
        ll = -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * r**2 / s2
        return ll, r / s2, np.broadcast_to(-1.0 / s2, r.shape).copy()

    def expected_log_lik(self, y, mean, var, rule=DEFAULT_RULE):
        # Gaussian-by-Gaussian integral in closed form
        var = _check_var(var)
        s2 = self.noise_variance
        y = np.asarray(y, dtype=float)
        mean = np.asarray(mean, dtype=float)
        value = -0.5 * (LOG_2PI + np.log(s2)) - ((y - mean) ** 2 + var) / (2.0 * s2)
        d_dmean = (y - mean) / s2
        d_dvar = np.broadcast_to(-0.5 / s2, value.shape).copy()
        return value, d_dmean, d_dvar

    def tilted_moments(self, y, cav_mean, cav_var, rule=DEFAULT_RULE):
        cav_var = _check_var(cav_var)
        s2 = self.noise_variance
        y = np.asarray(y, dtype=float)
        cav_mean = np.asarray(cav_mean, dtype=float)
        total = cav_var + s2
        log_z = -0.5 * (LOG_2PI + np.log(total)) - 0.5 * (y - cav_mean) ** 2 / total
        t_var = 1.0 / (1.0 / cav_var + 1.0 / s2)
        t_mean = t_var * (cav_mean / cav_var + y / s2)
        return log_z, t_mean, t_var + np.zeros_like(log_z)

    def log_partition(self, y, mean, var, rule=DEFAULT_RULE, power: float = 1.0):
        if power == 1.0:
            log_z, _, _ = self.tilted_moments(y, mean, var, rule)
            return log_z
        return super().log_partition(y, mean, var, rule, power)


class StudentT(Likelihood):
    """Heavy-tailed noise; degrees of freedom are fixed, only the scale trains."""

    trainable = ("log_scale",)

    def __init__(self, dof: float = 3.0, log_scale: float = 0.0):
        if dof <= 0:
            raise ValueError("degrees of freedom must be positive")
        self.dof = float(dof)
        self.log_scale = float(log_scale)

    def copy(self):
        return StudentT(self.dof, self.log_scale)

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    def log_density(self, y, f):
        nu, s = self.dof, self.scale
        r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
        const = (
            gammaln((nu + 1.0) / 2.0)
            - gammaln(nu / 2.0)
            - 0.5 * np.log(nu * np.pi * s**2)
        )
        return const - (nu + 1.0) / 2.0 * np.log1p(r**2 / (nu * s**2))

    def log_density_grads(self, y, f):
        nu, s = self.dof, self.scale
        r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
        denom = nu * s**2 + r**2
        ll = self.log_density(y, f)
        d1 = (nu + 1.0) * r / denom
        d2 = (nu + 1.0) * (r**2 - nu * s**2) / denom**2
        return ll, d1, d2


def make_likelihood(kind: str, **hyper) -> Likelihood:
    """Build a likelihood from its config name."""
    if kind == "bernoulli_probit":
        return BernoulliProbit()
    if kind == "gaussian":
        return Gaussian(**hyper)
    if kind == "student_t":
        return StudentT(**hyper)
    raise GpvemError(f"unknown likelihood kind: {kind!r}")
