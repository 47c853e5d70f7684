"""Laplace approximation: Newton mode finding and the Gaussian-integral energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NewtonDivergenceError
from .kernels import GramMatrix
from .likelihoods import Likelihood
from .objectives import LOG_2PI, ObjectiveValue
from .sites import DualSites

#: negative log-likelihood curvatures are clamped below at this value so the
#: Hessian stays positive definite for non-log-concave likelihoods (Student-t)
W_FLOOR = 1e-10

GRAD_TOL = 1e-6
MAX_NEWTON_ITERS = 100
MAX_BACKTRACKS = 20


@dataclass
class LaplaceFit:
    """Posterior mode, curvature at the mode, and convergence diagnostics."""

    mode: np.ndarray
    w: np.ndarray
    converged: bool
    iterations: int


def _log_posterior(gram: GramMatrix, y, lik, f):
    """Psi(f) = log p(y|f) - 1/2 f^T K^-1 f (mode-relevant part, constants dropped)."""
    ll = float(np.sum(lik.log_density(y, f)))
    return ll - 0.5 * float(f @ gram.solve(f))


def laplace_fit(gram: GramMatrix, y: np.ndarray, lik: Likelihood) -> LaplaceFit:
    """Newton iterations with backtracking until the mode gradient vanishes.

    Each step solves the regularized system through
    B = I + W^1/2 K W^1/2 (no explicit K^-1), with W clamped at the floor.
    """
    n = gram.n
    f = np.zeros(n)
    psi = _log_posterior(gram, y, lik, f)
    converged = False
    iterations = 0
    for iterations in range(1, MAX_NEWTON_ITERS + 1):
        _, d1, d2 = lik.log_density_grads(y, f)
        w = np.maximum(-d2, W_FLOOR)
        sqrt_w = np.sqrt(w)
        b = np.eye(n) + sqrt_w[:, None] * gram.values * sqrt_w[None, :]
        chol_b = np.linalg.cholesky(0.5 * (b + b.T))
        rhs = w * f + d1
        half = scipy.linalg.cho_solve((chol_b, True), sqrt_w * (gram.values @ rhs))
        a = rhs - sqrt_w * half
        f_new = gram.values @ a
        step = f_new - f
        t = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS + 1):
            cand = f + t * step
            psi_cand = _log_posterior(gram, y, lik, cand)
            if not np.isfinite(psi_cand):
                raise NewtonDivergenceError("non-finite objective during mode search")
            if psi_cand >= psi - 1e-12:
                f, psi = cand, psi_cand
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        grad = lik.log_density_grads(y, f)[1] - gram.solve(f)
        if np.max(np.abs(grad)) < GRAD_TOL:
            converged = True
            break
    _, _, d2 = lik.log_density_grads(y, f)
    return LaplaceFit(
        mode=f, w=np.maximum(-d2, W_FLOOR), converged=converged, iterations=iterations
    )


def laplace_energy(
    gram: GramMatrix, fit: LaplaceFit, y: np.ndarray, lik: Likelihood
) -> ObjectiveValue:
    """Second-order approximation of the log marginal likelihood at the mode.

    Psi(f^) + n/2 log 2pi - 1/2 log|K^-1 + W| collapses to
    log p(y|f^) - 1/2 f^^T K^-1 f^ - 1/2 log|I + W^1/2 K W^1/2|.
    """
    f = fit.mode
    sqrt_w = np.sqrt(fit.w)
    b = np.eye(gram.n) + sqrt_w[:, None] * gram.values * sqrt_w[None, :]
    chol_b = np.linalg.cholesky(0.5 * (b + b.T))
    ll = lik.log_density(y, f)
    value = (
        float(np.sum(ll))
        - 0.5 * float(f @ gram.solve(f))
        - float(np.sum(np.log(np.diag(chol_b))))
    )
    return ObjectiveValue(value=value, per_point=np.asarray(ll, dtype=float))


def laplace_sites(gram: GramMatrix, fit: LaplaceFit, y: np.ndarray, lik: Likelihood) -> DualSites:
    """Dual-site view of the Laplace posterior, for the shared prediction path.

    Matching N(f^, (K^-1 + W)^-1) to the site posterior gives lambda2 = -W/2
    and lambda1 = grad log p(y|f^) + W f^ (using K^-1 f^ = grad at the mode).
    """
    _, d1, _ = lik.log_density_grads(y, fit.mode)
    w = np.maximum(fit.w, 2e-10)
    return DualSites(lambda1=d1 + w * fit.mode, lambda2=-0.5 * w)
