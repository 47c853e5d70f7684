"""Natural-gradient variational inference in the dual (site) parameterization.

One step moves every site toward the gradient of the expected log-likelihood
in expectation parameters: lambda <- (1 - rho) lambda + rho grad. For a
Gaussian likelihood the gradient is state-independent, so rho = 1 converges
in a single step to the exact conjugate posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GramMatrix
from .likelihoods import DEFAULT_RULE, Likelihood
from .sites import DualSites, crop_lambda2, posterior_marginals


@dataclass
class CviConfig:
    rho: float = 0.1
    steps: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")


@dataclass
class CviResult:
    sites: DualSites
    converged: bool
    steps: int


def cvi_step(
    gram: GramMatrix,
    sites: DualSites,
    y: np.ndarray,
    lik: Likelihood,
    rho: float,
    rule=DEFAULT_RULE,
) -> DualSites:
    """One damped natural-gradient update of all sites; lambda2 is cropped."""
    if rho == 0.0:
        return sites.copy()
    mean, var = posterior_marginals(gram, sites)
    g1, g2 = lik.dual_gradient(y, mean, var, rule)
    lambda1 = (1.0 - rho) * sites.lambda1 + rho * g1
    lambda2 = crop_lambda2((1.0 - rho) * sites.lambda2 + rho * g2)
    return DualSites(lambda1, lambda2)


def _relative_change(new: DualSites, old: DualSites) -> float:
    d1 = np.max(np.abs(new.lambda1 - old.lambda1) / (1.0 + np.abs(old.lambda1)))
    d2 = np.max(np.abs(new.lambda2 - old.lambda2) / (1.0 + np.abs(old.lambda2)))
    return max(float(d1), float(d2))


def cvi_fit(
    gram: GramMatrix,
    y: np.ndarray,
    lik: Likelihood,
    cfg: CviConfig = CviConfig(),
    rule=DEFAULT_RULE,
    init_sites: DualSites | None = None,
) -> CviResult:
    """Iterate cvi_step until the relative site change drops below tol."""
    y = np.asarray(y, dtype=float)
    sites = init_sites.copy() if init_sites is not None else DualSites.near_prior(gram.n)
    steps = 0
    converged = False
    for steps in range(1, cfg.steps + 1):
        new_sites = cvi_step(gram, sites, y, lik, cfg.rho, rule)
        change = _relative_change(new_sites, sites)
        sites = new_sites
        if change < cfg.tol:
            converged = True
            break
    return CviResult(sites=sites, converged=converged, steps=steps)
