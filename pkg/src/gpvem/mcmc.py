"""Gold-standard log marginal likelihood at fixed hyperparameters.

Annealed importance sampling over the polynomial temperature ladder
tau(t) = (t/T)^p with elliptical slice sampling transitions. The chain lives
in the whitened coordinates alpha = K^-1 f, whose prior is N(0, K^-1):
drawing z ~ N(0, I) and solving L^T nu = z gives nu ~ N(0, K^-1), and the
corresponding function values are K nu = L z without any extra solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AisFailureError, EssBracketError
from .kernels import GramMatrix
from .likelihoods import Likelihood

BRACKET_FLOOR = 1e-12


@dataclass
class AisConfig:
    ladder_length: int = 2000
    schedule_power: float = 4.0
    seed: int = 0
    replicates: int = 3
    transitions_per_rung: int = 1

    def __post_init__(self):
        if self.ladder_length < 1:
            raise ValueError("ladder_length must be >= 1")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


def temperature_schedule(t: np.ndarray, ladder_length: int, power: float = 4.0) -> np.ndarray:
    """tau(t) = (t / T)^power with tau(0) = 0 and tau(T) = 1."""
    return (np.asarray(t, dtype=float) / ladder_length) ** power


class _WhitenedChain:
    """ESS state carrying both alpha and f = K alpha to avoid per-step matvecs."""

    def __init__(self, gram: GramMatrix, rng: np.random.Generator):
        self.gram = gram
        z = rng.standard_normal(gram.n)
        self.alpha = scipy.linalg.solve_triangular(gram.chol.T, z, lower=False)
        self.f = gram.chol @ z

    def transition(self, log_lik, rng: np.random.Generator):
        """One elliptical slice update leaving log_lik(f) + log N(alpha; 0, K^-1) invariant."""
        z = rng.standard_normal(self.gram.n)
        nu = scipy.linalg.solve_triangular(self.gram.chol.T, z, lower=False)
        f_nu = self.gram.chol @ z
        current = log_lik(self.f)
        threshold = current + np.log(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        lo, hi = angle - 2.0 * np.pi, angle
        while True:
            cand_alpha = self.alpha * np.cos(angle) + nu * np.sin(angle)
            cand_f = self.f * np.cos(angle) + f_nu * np.sin(angle)
            value = log_lik(cand_f)
            if np.isfinite(value) and value > threshold:
                self.alpha, self.f = cand_alpha, cand_f
                return
            if angle < 0:
                lo = angle
            else:
                hi = angle
            if hi - lo < BRACKET_FLOOR:
                raise EssBracketError("slice bracket collapsed below 1e-12 radians")
            angle = rng.uniform(lo, hi)


def ess_transition(alpha: np.ndarray, gram: GramMatrix, log_lik_tempered, rng) -> np.ndarray:
    """One elliptical slice transition of alpha under the given tempered log-likelihood."""
    chain = _WhitenedChain.__new__(_WhitenedChain)
    chain.gram = gram
    chain.alpha = np.asarray(alpha, dtype=float).copy()
    chain.f = gram.values @ chain.alpha
    chain.transition(lambda f: float(log_lik_tempered(f)), rng)
    return chain.alpha


def _replicate(gram: GramMatrix, y: np.ndarray, lik: Likelihood, cfg: AisConfig, seed) -> float:
    rng = np.random.default_rng(seed)
    taus = temperature_schedule(np.arange(cfg.ladder_length + 1), cfg.ladder_length, cfg.schedule_power)

    def log_lik_full(f):
        return float(np.sum(lik.log_density(y, f)))

    chain = _WhitenedChain(gram, rng)
    log_weight = 0.0
    for t in range(1, cfg.ladder_length + 1):
        log_weight += (taus[t] - taus[t - 1]) * log_lik_full(chain.f)
        tau = taus[t]
        if tau > 0.0:
            for _ in range(cfg.transitions_per_rung):
                chain.transition(lambda f: tau * log_lik_full(f), rng)
    return log_weight


def ais_log_marginal(gram: GramMatrix, y: np.ndarray, lik: Likelihood, cfg: AisConfig = AisConfig()):
    """AIS estimate of log p(y; theta): telescoping log-weights down the ladder.

    Returns (estimate, per_replicate); the estimate is the arithmetic mean of
    the replicate log-estimates, i.e. the log of their geometric mean. Failed
    replicates are NaN; fewer than two survivors raise AisFailureError.
    """
    y = np.asarray(y, dtype=float)
    per_replicate = np.full(cfg.replicates, np.nan)
    for r in range(cfg.replicates):
        try:
            per_replicate[r] = _replicate(gram, y, lik, cfg, seed=[cfg.seed, r])
        except EssBracketError:
            continue
    survivors = np.isfinite(per_replicate)
    if cfg.replicates >= 2 and survivors.sum() < 2:
        raise AisFailureError("fewer than two AIS replicates survived")
    if survivors.sum() == 0:
        raise AisFailureError("no AIS replicate survived")
    return float(np.mean(per_replicate[survivors])), per_replicate
