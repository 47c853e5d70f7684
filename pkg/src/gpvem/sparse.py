"""Sparse dual-parameterized variational GP over inducing points.

Each datapoint keeps a projected site exp<lambda_{u,i}, T(a_i^T u)> with
a_i = K_uu^-1 k_{u,i}. The posterior over the inducing variables is then
determined by the tied summaries

    S_u^-1 m_u = K_uu^-1 (sum_i k_{u,i} lambda_1,i)
    S_u^-1     = K_uu^-1 + K_uu^-1 (sum_i k_{u,i} W_i k_{u,i}^T) K_uu^-1

with W_i = -2 lambda_2,i. Per-point duals are stored (2n scalars) and the
summaries derived: the power-EP energy consumes per-point sites anyway, and
at desk scale the storage saving of keeping only the summaries is moot.

All solves route through T = K_uu + sum_i k_{u,i} W_i k_{u,i}^T, which gives
S_u = K_uu T^-1 K_uu without forming K_uu^-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CavityCollapseError, PosteriorCollapseError
from .kernels import GramMatrix, KernelParams, cross_gram, gram, kernel_diag
from .likelihoods import DEFAULT_RULE, Likelihood
from .objectives import ObjectiveValue
from .sites import LAMBDA2_FLOOR, crop_lambda2

KMEANS_MAX_ITERS = 50


@dataclass
class SparseState:
    """Fixed inducing inputs plus the per-point projected dual sites."""

    z: np.ndarray
    lambda1_u: np.ndarray
    lambda2_u: np.ndarray

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        self.lambda1_u = np.asarray(self.lambda1_u, dtype=float)
        self.lambda2_u = np.asarray(self.lambda2_u, dtype=float)

    @property
    def m(self) -> int:
        return self.z.shape[0]

    @property
    def n(self) -> int:
        return self.lambda1_u.size

    def copy(self) -> "SparseState":
        return SparseState(self.z.copy(), self.lambda1_u.copy(), self.lambda2_u.copy())

    @classmethod
    def near_prior(cls, z: np.ndarray, n: int) -> "SparseState":
        return cls(z, np.zeros(n), np.full(n, -LAMBDA2_FLOOR))


@dataclass
class SparseGram:
    """Kernel pieces a sparse evaluation needs: K_uu, K_uf, and the prior diagonal."""

    kuu: GramMatrix
    kuf: np.ndarray
    kdiag: np.ndarray

    @classmethod
    def build(cls, x: np.ndarray, z: np.ndarray, params: KernelParams, base_jitter: float = 1e-8):
        """Build the kernel pieces under a nugget-consistent jittered prior.

        The stabilizing jitter is read as white noise attached to each input
        location, so inducing points that coincide with training inputs share
        it: those K_uf entries and the matching prior variances get the same
        nugget as K_uu. This makes Z = X reproduce the full model exactly and
        is what lets inducing-at-data-subset configurations nest cleanly.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        kuu = gram(z, params, base_jitter)
        kuf = cross_gram(z, x, params)
        nugget = kuu.jitter_used
        z_index = {row.tobytes(): j for j, row in enumerate(z)}
        for i, row in enumerate(x):
            j = z_index.get(row.tobytes())
            if j is not None:
                kuf[j, i] += nugget
        return cls(kuu=kuu, kuf=kuf, kdiag=kernel_diag(x, params) + nugget)


def tied_summaries(state: SparseState, kernels: SparseGram):
    """Assemble (lambda1_bar, Lambda2_bar) from the per-point duals.

    lambda1_bar = K_uf lambda1 (length m); Lambda2_bar = K_uf diag(W) K_fu
    with W = -2 lambda2, so that S_u^-1 = K_uu^-1 + K_uu^-1 Lambda2_bar K_uu^-1.
    """
    w = -2.0 * state.lambda2_u
    l1_bar = kernels.kuf @ state.lambda1_u
    l2_bar = (kernels.kuf * w[None, :]) @ kernels.kuf.T
    return l1_bar, l2_bar


class _SparseOps:
    """Factorizations shared by the sparse marginals, ELBO, and energy.

    Works in the whitened coordinates A = L^-1 K_uf (L = chol K_uu), where the
    tied precision becomes B_s = I + A diag(W) A^T. B_s stays well conditioned
    even when K_uu is nearly singular, and log|K_uu| cancels out of every
    downstream quantity.
    """

    def __init__(self, state: SparseState, kernels: SparseGram):
        self.state = state
        self.kernels = kernels
        self.w = -2.0 * state.lambda2_u
        m = kernels.kuu.n
        self.a = scipy.linalg.solve_triangular(kernels.kuu.chol, kernels.kuf, lower=True)
        b_s = np.eye(m) + (self.a * self.w[None, :]) @ self.a.T
        try:
            self.chol_bs = np.linalg.cholesky(0.5 * (b_s + b_s.T))
        except np.linalg.LinAlgError:
            raise PosteriorCollapseError("sparse posterior precision not PD") from None
        half = scipy.linalg.solve_triangular(self.chol_bs, self.a, lower=True)
        self.c = np.sum(half**2, axis=0)                  # a_i^T S_u a_i
        self.q = np.sum(self.a**2, axis=0)                # a_i^T K_uu a_i
        self.cond_var = np.maximum(kernels.kdiag - self.q, 0.0)
        self.u = self.a @ state.lambda1_u
        self.bs_inv_u = scipy.linalg.cho_solve((self.chol_bs, True), self.u)
        self.e = self.a.T @ self.bs_inv_u                 # a_i^T m_u = marginal means

    def logdet_bs(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol_bs))))

    def trace_bs_inv(self) -> float:
        inv_half = scipy.linalg.solve_triangular(
            self.chol_bs, np.eye(self.chol_bs.shape[0]), lower=True
        )
        return float(np.sum(inv_half**2))

    def marginals(self):
        return self.e, self.cond_var + self.c

    def mean_u(self) -> np.ndarray:
        return self.kernels.kuu.chol @ self.bs_inv_u

    def cov_u(self) -> np.ndarray:
        half = scipy.linalg.solve_triangular(
            self.chol_bs, self.kernels.kuu.chol.T, lower=True
        )
        s = half.T @ half
        return 0.5 * (s + s.T)


def sparse_marginals(state: SparseState, kernels: SparseGram):
    """Per-point posterior (mean, variance): N(a_i^T m_u, k_ii - a_i^T (K_uu - S_u) a_i)."""
    return _SparseOps(state, kernels).marginals()


def sparse_cvi_step(
    state: SparseState,
    kernels: SparseGram,
    y: np.ndarray,
    lik: Likelihood,
    rho: float,
    rule=DEFAULT_RULE,
) -> SparseState:
    """Damped natural-gradient update of the projected duals at the current marginals."""
    if rho == 0.0:
        return state.copy()
    mean, var = sparse_marginals(state, kernels)
    g1, g2 = lik.dual_gradient(y, mean, var, rule)
    lambda1 = (1.0 - rho) * state.lambda1_u + rho * g1
    lambda2 = crop_lambda2((1.0 - rho) * state.lambda2_u + rho * g2)
    return SparseState(state.z, lambda1, lambda2)


def sparse_cvi_fit(
    state: SparseState,
    kernels: SparseGram,
    y: np.ndarray,
    lik: Likelihood,
    rho: float = 0.1,
    steps: int = 500,
    tol: float = 1e-6,
    rule=DEFAULT_RULE,
):
    """Iterate sparse_cvi_step to a fixed point; returns (state, converged, steps)."""
    y = np.asarray(y, dtype=float)
    converged = False
    taken = 0
    for taken in range(1, steps + 1):
        new_state = sparse_cvi_step(state, kernels, y, lik, rho, rule)
        change = max(
            float(np.max(np.abs(new_state.lambda1_u - state.lambda1_u) / (1.0 + np.abs(state.lambda1_u)))),
            float(np.max(np.abs(new_state.lambda2_u - state.lambda2_u) / (1.0 + np.abs(state.lambda2_u)))),
        )
        state = new_state
        if change < tol:
            converged = True
            break
    return state, converged, taken


def sparse_elbo(
    state: SparseState,
    kernels: SparseGram,
    y: np.ndarray,
    lik: Likelihood,
    rule=DEFAULT_RULE,
) -> ObjectiveValue:
    """sum_i E_{q_u(f_i)}[log p(y_i|f_i)] - KL[q(u) || p(u)]."""
    ops = _SparseOps(state, kernels)
    mean, var = ops.marginals()
    exp_ll, _, _ = lik.expected_log_lik(y, mean, var, rule)
    m = kernels.kuu.n
    # in whitened coordinates: KL = 1/2 (tr B_s^-1 + |B_s^-1 u|^2 - m + log|B_s|)
    kl = 0.5 * (
        ops.trace_bs_inv()
        + float(ops.bs_inv_u @ ops.bs_inv_u)
        - m
        + ops.logdet_bs()
    )
    return ObjectiveValue(value=float(np.sum(exp_ll) - kl), per_point=exp_ll)


@dataclass
class SparseEnergyTerms:
    """Per-point cavity and tilted pieces of the sparse power-EP energy."""

    cav_mean: np.ndarray
    cav_var: np.ndarray
    log_z_tilted: np.ndarray
    gaussian_part: float
    alpha: float


def sparse_energy_terms(
    state: SparseState,
    kernels: SparseGram,
    y: np.ndarray,
    lik: Likelihood,
    alpha: float = 1.0,
    rule=DEFAULT_RULE,
) -> SparseEnergyTerms:
    """Cavities, tilted log-partitions, and the aggregate Gaussian term."""
    ops = _SparseOps(state, kernels)
    zeta2 = ops.w
    d = 1.0 - alpha * zeta2 * ops.c
    bad = np.nonzero(d <= 0)[0]
    if bad.size:
        raise CavityCollapseError(
            f"sparse cavity invalid at index {bad[0]}", index=int(bad[0])
        )
    lambda1 = state.lambda1_u
    cav_mean = (ops.e - alpha * ops.c * lambda1) / d
    cav_var = ops.cond_var + ops.c / d
    log_z = lik.log_partition(y, cav_mean, cav_var, rule, power=alpha)
    gaussian_part = -0.5 * ops.logdet_bs() + 0.5 * float(lambda1 @ ops.e)
    return SparseEnergyTerms(
        cav_mean=cav_mean,
        cav_var=cav_var,
        log_z_tilted=np.asarray(log_z, dtype=float),
        gaussian_part=gaussian_part,
        alpha=alpha,
    )


def sparse_ep_energy(
    state: SparseState,
    kernels: SparseGram,
    y: np.ndarray,
    lik: Likelihood,
    alpha: float = 1.0,
    rule=DEFAULT_RULE,
) -> ObjectiveValue:
    """Sparse power-EP marginal-likelihood estimate at the supplied duals.

    value = 1/2 log|S_u| + 1/2 m_u^T S_u^-1 m_u - 1/2 log|K_uu|
            + (1/alpha) sum_i logZ_tilted,i
            + sum_i [ -1/(2 alpha) log d_i + zeta2_i e_i^2 / (2 d_i)
                      + alpha lambda1_i^2 c_i / (2 d_i) - lambda1_i e_i / d_i ]

    with c_i = a_i^T S_u a_i, e_i = a_i^T m_u, d_i = 1 - alpha zeta2_i c_i and
    zeta2_i = -2 lambda2_i. At alpha = 1 this reduces to standard EP; with
    inducing points at the data it matches the full-model energy.
    """
    ops = _SparseOps(state, kernels)
    zeta2 = ops.w
    d = 1.0 - alpha * zeta2 * ops.c
    bad = np.nonzero(d <= 0)[0]
    if bad.size:
        raise CavityCollapseError(
            f"sparse cavity invalid at index {bad[0]}", index=int(bad[0])
        )
    lambda1 = state.lambda1_u
    cav_mean = (ops.e - alpha * ops.c * lambda1) / d
    cav_var = ops.cond_var + ops.c / d
    log_z = lik.log_partition(y, cav_mean, cav_var, rule, power=alpha)
    bracket = (
        -0.5 / alpha * np.log(d)
        + 0.5 * zeta2 * ops.e**2 / d
        + 0.5 * alpha * lambda1**2 * ops.c / d
        - lambda1 * ops.e / d
    )
    gaussian_part = -0.5 * ops.logdet_bs() + 0.5 * float(lambda1 @ ops.e)
    per_point = log_z / alpha + bracket
    return ObjectiveValue(value=gaussian_part + float(np.sum(per_point)), per_point=per_point)


def sparse_predict(
    state: SparseState,
    kernels: SparseGram,
    params: KernelParams,
    xstar: np.ndarray,
):
    """Latent predictive (mean, var) at test inputs through q(u).

    q(f*) = int p(f*|u) q(u) du = N(a*^T m_u, k** - a*^T (K_uu - S_u) a*).
    """
    ops = _SparseOps(state, kernels)
    xstar = np.atleast_2d(np.asarray(xstar, dtype=float))
    kus = cross_gram(state.z, xstar, params)
    a_star = scipy.linalg.solve_triangular(kernels.kuu.chol, kus, lower=True)
    fmean = a_star.T @ ops.bs_inv_u
    half = scipy.linalg.solve_triangular(ops.chol_bs, a_star, lower=True)
    fvar = (
        kernel_diag(xstar, params)
        - np.sum(a_star**2, axis=0)
        + np.sum(half**2, axis=0)
    )
    return fmean, np.maximum(fvar, 1e-300)


def kmeans_inducing(x: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Lloyd's algorithm from seeded random centers; deterministic per seed.

    Runs until centroid stability or 50 iterations; empty clusters keep their
    previous centroid.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if m > n:
        raise ValueError(f"cannot place {m} inducing points on {n} inputs")
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(n, size=m, replace=False)].copy()
    for _ in range(KMEANS_MAX_ITERS):
        d2 = (
            np.sum(x**2, axis=1)[:, None]
            - 2.0 * x @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        assign = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(m):
            members = x[assign == j]
            if members.shape[0]:
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers, rtol=0.0, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    return centers
