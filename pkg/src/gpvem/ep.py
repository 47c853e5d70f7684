"""Full expectation propagation with damped sequential moment matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EpFailureError
from .kernels import GramMatrix
from .likelihoods import DEFAULT_RULE, Likelihood
from .sites import LAMBDA2_FLOOR, DualSites, crop_lambda2, posterior_from_sites


@dataclass
class EpConfig:
    damping: float = 0.5
    max_sweeps: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class EpResult:
    sites: DualSites
    converged: bool
    sweeps: int
    skipped_sites: int = 0


def ep_fit(
    gram: GramMatrix,
    y: np.ndarray,
    lik: Likelihood,
    cfg: EpConfig = EpConfig(),
    rule=DEFAULT_RULE,
    init_sites: DualSites | None = None,
) -> EpResult:
    """Sequential EP sweeps in ascending index order.

    Per site: delete it from the current posterior marginal to form the
    cavity, moment-match against the tilted distribution, damp the natural
    parameters, and crop lambda2. Sites whose cavity collapses are skipped for
    the sweep; a sweep where more than half the sites collapse aborts.
    Convergence is the max absolute change of any site natural in a sweep.
    """
    y = np.asarray(y, dtype=float)
    n = gram.n
    sites = init_sites.copy() if init_sites is not None else DualSites.near_prior(n)
    post = posterior_from_sites(gram, sites)
    mean, cov = post.mean, post.cov

    converged = False
    sweeps = 0
    total_skipped = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        max_change = 0.0
        skipped = 0
        for i in range(n):
            v_i = cov[i, i]
            m_i = mean[i]
            # cavity: remove site i from its own marginal
            site_prec = -2.0 * sites.lambda2[i]
            cav_prec = 1.0 / v_i - site_prec
            if cav_prec <= 0:
                skipped += 1
                continue
            cav_var = 1.0 / cav_prec
            cav_mean = cav_var * (m_i / v_i - sites.lambda1[i])
            _, t_mean, t_var = lik.tilted_moments(y[i], cav_mean, cav_var, rule)
            new_l2 = -0.5 * (1.0 / t_var - cav_prec)
            new_l1 = t_mean / t_var - cav_mean * cav_prec
            d = cfg.damping
            l1 = (1.0 - d) * sites.lambda1[i] + d * new_l1
            l2 = crop_lambda2((1.0 - d) * sites.lambda2[i] + d * new_l2)
            dl1 = l1 - sites.lambda1[i]
            dl2 = l2 - sites.lambda2[i]
            max_change = max(max_change, abs(dl1), abs(dl2))
            # rank-1 posterior refresh: precision gains dw e_i e_i^T
            dw = -2.0 * dl2
            s_col = cov[:, i]
            denom = 1.0 + dw * v_i
            if denom <= 1e-12:
                skipped += 1
                continue
            sites.lambda1[i] = l1
            sites.lambda2[i] = l2
            cov = cov - np.outer(s_col, s_col) * (dw / denom)
            mean = cov @ sites.lambda1
        total_skipped += skipped
        if skipped > n // 2:
            raise EpFailureError(
                f"EP skipped {skipped}/{n} sites in sweep {sweeps}"
            )
        # refresh from scratch once per sweep to kill rank-1 drift
        post = posterior_from_sites(gram, sites)
        mean, cov = post.mean, post.cov
        if max_change < cfg.tol:
            converged = True
            break
    return EpResult(
        sites=sites, converged=converged, sweeps=sweeps, skipped_sites=total_skipped
    )
