"""Hybrid variational-EM training loop.

Each outer iteration runs J_E natural-gradient site updates at fixed
hyperparameters (E-step) followed by J_M Adam steps on the selected learning
objective at fixed sites (M-step). With the EP energy as M-objective the
combined iteration is no longer coordinate ascent, so training additionally
stops — returning the previous snapshot — as soon as that energy decreases
between outer iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cvi import cvi_step
from .errors import CavityCollapseError, OptimizerError, PosteriorCollapseError, TrainingFailureError
from .kernels import KernelParams, gram
from .likelihoods import DEFAULT_RULE, Likelihood
from .objectives import OBJECTIVES, elbo, objective_grad_theta, pack_theta, unpack_theta
from .sites import DualSites

MAX_STEP_HALVINGS = 5


@dataclass
class AdamState:
    """First/second moment accumulators of the Adam optimizer."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(m=np.zeros(dim), v=np.zeros(dim), beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, grad: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns (new state, parameter delta).

    The delta is the ascent direction for a maximized objective, i.e. the
    caller adds it to the parameters.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise OptimizerError("non-finite gradient passed to Adam")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    delta = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, t=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_state, delta


@dataclass
class TrainerConfig:
    k_outer: int = 250
    j_e: int = 20
    j_m: int = 20
    rho_e: float = 0.1
    rho_m: float = 0.01
    m_objective: str = "ep_energy"
    max_total_steps: int = 10_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    theta_tol: float = 1e-6
    site_tol: float = 1e-6
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.m_objective not in OBJECTIVES:
            raise ValueError(f"unknown M-step objective {self.m_objective!r}")
        for name in ("k_outer", "j_e", "j_m", "max_total_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainTrace:
    """Per-outer-iteration (theta, E-objective, M-objective) records."""

    theta: list = field(default_factory=list)
    e_value: list = field(default_factory=list)
    m_value: list = field(default_factory=list)
    stop_reason: str = "budget_exhausted"
    total_steps: int = 0

    def append(self, theta, e_value, m_value):
        self.theta.append(np.asarray(theta, dtype=float).copy())
        self.e_value.append(float(e_value))
        self.m_value.append(float(m_value))


@dataclass
class TrainResult:
    sites: DualSites
    params: KernelParams
    lik: Likelihood
    trace: TrainTrace


def train(
    x: np.ndarray,
    y: np.ndarray,
    lik: Likelihood,
    init_params: KernelParams,
    cfg: TrainerConfig = TrainerConfig(),
    rule=DEFAULT_RULE,
) -> TrainResult:
    """Alternate natural-gradient E-steps and Adam M-steps on the full model."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("training data must be nonempty")
    params = init_params.copy()
    lik = lik.copy()
    m_objective = OBJECTIVES[cfg.m_objective]

    gram_matrix = gram(x, params)
    sites = DualSites.near_prior(y.size)
    theta = pack_theta(params, lik)
    adam = AdamState.zeros(theta.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = TrainTrace()
    prev_snapshot = None
    prev_m_value = None

    def evaluate(current_theta):
        p, l = unpack_theta(current_theta, params, lik)
        k = gram(x, p)
        return m_objective(k, sites, y, l, rule).value, p, l, k

    for _ in range(cfg.k_outer):
        prev_theta = theta.copy()
        prev_sites = sites.copy()

        try:
            for _ in range(cfg.j_e):
                sites = cvi_step(gram_matrix, sites, y, lik, cfg.rho_e, rule)
        except PosteriorCollapseError as exc:
            raise TrainingFailureError(f"E-step diverged: {exc}", trace=trace) from exc
        trace.total_steps += cfg.j_e
        e_value = elbo(gram_matrix, sites, y, lik, rule).value

        m_value = None
        m_ended_early = False
        for _ in range(cfg.j_m):
            try:
                grad = objective_grad_theta(
                    m_objective, x, params, lik, sites, y, rule, step=cfg.fd_step
                )
            except CavityCollapseError:
                m_ended_early = True
                break
            adam, delta = adam_step(adam, grad, cfg.rho_m)
            accepted = False
            for _ in range(MAX_STEP_HALVINGS + 1):
                try:
                    candidate = theta + delta
                    m_value, params, lik, gram_matrix = evaluate(candidate)
                    theta = candidate
                    accepted = True
                    break
                except CavityCollapseError:
                    delta = 0.5 * delta
            trace.total_steps += 1
            if not accepted:
                m_ended_early = True
                break
        if m_value is None:
            # no theta move was evaluable; score the current iterate
            try:
                m_value = m_objective(gram_matrix, sites, y, lik, rule).value
            except CavityCollapseError as exc:
                raise TrainingFailureError(
                    f"M-objective not evaluable at current iterate: {exc}", trace=trace
                ) from exc
        if not np.isfinite(m_value):
            raise TrainingFailureError("M-objective diverged to non-finite", trace=trace)
        trace.append(theta, e_value, m_value)

        if (
            cfg.m_objective == "ep_energy"
            and prev_m_value is not None
            and m_value < prev_m_value
        ):
            trace.stop_reason = "m_objective_decreased"
            prev_sites_snap, prev_params_snap, prev_lik_snap = prev_snapshot
            return TrainResult(prev_sites_snap, prev_params_snap, prev_lik_snap, trace)

        prev_snapshot = (sites.copy(), params.copy(), lik.copy())
        prev_m_value = m_value

        theta_change = np.max(np.abs(theta - prev_theta) / (1.0 + np.abs(prev_theta)))
        site_change = max(
            np.max(np.abs(sites.lambda1 - prev_sites.lambda1) / (1.0 + np.abs(prev_sites.lambda1))),
            np.max(np.abs(sites.lambda2 - prev_sites.lambda2) / (1.0 + np.abs(prev_sites.lambda2))),
        )
        if theta_change < cfg.theta_tol and site_change < cfg.site_tol and not m_ended_early:
            trace.stop_reason = "converged"
            return TrainResult(sites, params, lik, trace)
        if trace.total_steps >= cfg.max_total_steps:
            break

    trace.stop_reason = "budget_exhausted"
    return TrainResult(sites, params, lik, trace)


@dataclass
class SparseTrainResult:
    state: "SparseState"
    params: KernelParams
    lik: Likelihood
    trace: TrainTrace


def train_sparse(
    x: np.ndarray,
    y: np.ndarray,
    lik: Likelihood,
    init_params: KernelParams,
    z: np.ndarray,
    cfg: TrainerConfig = TrainerConfig(),
    rule=DEFAULT_RULE,
    alpha: float = 1.0,
) -> SparseTrainResult:
    """Sparse analogue of :func:`train` with fixed inducing inputs.

    E-steps move the projected duals, M-steps move theta on the sparse ELBO
    or sparse EP energy; the decrease-triggered stop rule carries over.
    """
    from .sparse import (
        SparseGram,
        SparseState,
        sparse_cvi_step,
        sparse_elbo,
        sparse_ep_energy,
    )

    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("training data must be nonempty")
    params = init_params.copy()
    lik = lik.copy()
    if cfg.m_objective == "ep_energy":
        m_objective = lambda st, kr, yy, ll: sparse_ep_energy(st, kr, yy, ll, alpha, rule).value
    else:
        m_objective = lambda st, kr, yy, ll: sparse_elbo(st, kr, yy, ll, rule).value

    kernels = SparseGram.build(x, z, params)
    state = SparseState.near_prior(z, y.size)
    theta = pack_theta(params, lik)
    adam = AdamState.zeros(theta.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = TrainTrace()
    prev_snapshot = None
    prev_m_value = None

    def value_at(current_theta):
        p, l = unpack_theta(current_theta, params, lik)
        kr = SparseGram.build(x, z, p)
        return m_objective(state, kr, y, l), p, l, kr

    def fd_grad(current_theta):
        g = np.empty_like(current_theta)
        for j in range(current_theta.size):
            hi = current_theta.copy()
            lo = current_theta.copy()
            hi[j] += cfg.fd_step
            lo[j] -= cfg.fd_step
            g[j] = (value_at(hi)[0] - value_at(lo)[0]) / (2.0 * cfg.fd_step)
        return g

    for _ in range(cfg.k_outer):
        prev_theta = theta.copy()

        try:
            for _ in range(cfg.j_e):
                state = sparse_cvi_step(state, kernels, y, lik, cfg.rho_e, rule)
        except PosteriorCollapseError as exc:
            raise TrainingFailureError(f"sparse E-step diverged: {exc}", trace=trace) from exc
        trace.total_steps += cfg.j_e
        e_value = sparse_elbo(state, kernels, y, lik, rule).value

        m_value = None
        m_ended_early = False
        for _ in range(cfg.j_m):
            try:
                grad = fd_grad(theta)
            except CavityCollapseError:
                m_ended_early = True
                break
            adam, delta = adam_step(adam, grad, cfg.rho_m)
            accepted = False
            for _ in range(MAX_STEP_HALVINGS + 1):
                try:
                    candidate = theta + delta
                    m_value, params, lik, kernels = value_at(candidate)
                    theta = candidate
                    accepted = True
                    break
                except CavityCollapseError:
                    delta = 0.5 * delta
            trace.total_steps += 1
            if not accepted:
                m_ended_early = True
                break
        if m_value is None:
            try:
                m_value = m_objective(state, kernels, y, lik)
            except CavityCollapseError as exc:
                raise TrainingFailureError(
                    f"sparse M-objective not evaluable: {exc}", trace=trace
                ) from exc
        if not np.isfinite(m_value):
            raise TrainingFailureError("sparse M-objective diverged", trace=trace)
        trace.append(theta, e_value, m_value)

        if (
            cfg.m_objective == "ep_energy"
            and prev_m_value is not None
            and m_value < prev_m_value
        ):
            trace.stop_reason = "m_objective_decreased"
            prev_state, prev_params, prev_lik = prev_snapshot
            return SparseTrainResult(prev_state, prev_params, prev_lik, trace)

        prev_snapshot = (state.copy(), params.copy(), lik.copy())
        prev_m_value = m_value

        theta_change = np.max(np.abs(theta - prev_theta) / (1.0 + np.abs(prev_theta)))
        if theta_change < cfg.theta_tol and not m_ended_early:
            trace.stop_reason = "converged"
            return SparseTrainResult(state, params, lik, trace)
        if trace.total_steps >= cfg.max_total_steps:
            break

    trace.stop_reason = "budget_exhausted"
    return SparseTrainResult(state, params, lik, trace)
