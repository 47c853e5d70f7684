"""Matern-5/2 covariance (isotropic and ARD) with stabilized Cholesky factorization.

The kernel is kappa(r) = sigma2 * (1 + sqrt(5) r + 5 r^2 / 3) * exp(-sqrt(5) r),
where r is the lengthscale-scaled distance: r^2 = sum_k (x_k - x'_k)^2 / ell_k^2.
Hyperparameters are stored on log scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, SingularKernelError

SQRT5 = np.sqrt(5.0)

DEFAULT_JITTER = 1e-8
JITTER_CAP = 1e-2
JITTER_GROWTH = 10.0


@dataclass
class KernelParams:
    """Log-lengthscale(s) and log signal variance of a Matern-5/2 kernel.

    ``log_lengthscales`` has length 1 for an isotropic kernel or d for ARD.
    """

    log_lengthscales: np.ndarray
    log_variance: float

    def __post_init__(self):
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=float)
        )
        self.log_variance = float(self.log_variance)
        if not np.all(np.isfinite(self.log_lengthscales)) or not np.isfinite(
            self.log_variance
        ):
            raise ValueError("kernel hyperparameters must be finite")

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))

    @property
    def n_hypers(self) -> int:
        return self.log_lengthscales.size + 1

    def theta(self) -> np.ndarray:
        """Flat log-hyperparameter vector: lengthscales first, variance last."""
        return np.append(self.log_lengthscales, self.log_variance)

    @classmethod
    def from_theta(cls, theta: np.ndarray) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(log_lengthscales=theta[:-1].copy(), log_variance=float(theta[-1]))

    def copy(self) -> "KernelParams":
        return KernelParams(self.log_lengthscales.copy(), self.log_variance)


@dataclass
class GramMatrix:
    """Kernel matrix with the jitter actually applied and its Cholesky factor."""

    values: np.ndarray
    jitter_used: float
    chol: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (K + jitter I) x = b through the cached factor."""
        return scipy.linalg.cho_solve((self.chol, True), b)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def _scaled_sqdist(x1: np.ndarray, x2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Pairwise squared distances after dividing each input dimension by its lengthscale."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    if x1.shape[1] != x2.shape[1]:
        raise DimensionMismatchError(
            f"input dimensions differ: {x1.shape[1]} vs {x2.shape[1]}"
        )
    if lengthscales.size == 1:
        scale = np.full(x1.shape[1], lengthscales[0])
    elif lengthscales.size == x1.shape[1]:
        scale = lengthscales
    else:
        raise DimensionMismatchError(
            f"{lengthscales.size} lengthscales for {x1.shape[1]}-dimensional inputs"
        )
    a = x1 / scale
    b = x2 / scale
    sq = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.maximum(sq, 0.0)


def _matern52_of_r(r: np.ndarray, variance: float) -> np.ndarray:
    return variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * np.exp(-SQRT5 * r)


def matern52(x: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """Covariance between two input vectors; symmetric and bounded by sigma2."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise DimensionMismatchError(f"input shapes differ: {x.shape} vs {x2.shape}")
    sq = _scaled_sqdist(x[None, :], x2[None, :], params.lengthscales)
    return float(_matern52_of_r(np.sqrt(sq), params.variance)[0, 0])


def cross_gram(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Rectangular covariance matrix kappa(x1, x2) without jitter."""
    r = np.sqrt(_scaled_sqdist(x1, x2, params.lengthscales))
    return _matern52_of_r(r, params.variance)


def kernel_diag(x: np.ndarray, params: KernelParams) -> np.ndarray:
    """Prior marginal variances kappa(x_i, x_i); constant for a stationary kernel."""
    n = np.atleast_2d(x).shape[0]
    return np.full(n, params.variance)


def stabilized_cholesky(a: np.ndarray, base_jitter: float = DEFAULT_JITTER):
    """Lower Cholesky factor of ``a + jitter I``, escalating jitter by x10 up to the cap.

    Returns ``(chol, jitter_used)``; raises SingularKernelError at the cap.
    """
    if base_jitter <= 0:
        raise ValueError("base_jitter must be positive")
    jitter = base_jitter
    eye = np.eye(a.shape[0])
    while True:
        try:
            chol = np.linalg.cholesky(a + jitter * eye)
            return chol, jitter
        except np.linalg.LinAlgError:
            if jitter >= JITTER_CAP:
                raise SingularKernelError(
                    f"Cholesky failed at jitter cap {jitter:g}", jitter=jitter
                ) from None
            jitter = min(jitter * JITTER_GROWTH, JITTER_CAP)


def gram(x: np.ndarray, params: KernelParams, base_jitter: float = DEFAULT_JITTER) -> GramMatrix:
    """Jittered kernel matrix over the rows of ``x`` with a successful Cholesky factor."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 1:
        raise DimensionMismatchError("gram needs at least one input row")
    k = cross_gram(x, x, params)
    k = 0.5 * (k + k.T)
    chol, jitter = stabilized_cholesky(k, base_jitter)
    return GramMatrix(values=k + jitter * np.eye(k.shape[0]), jitter_used=jitter, chol=chol)


def gram_grad(x: np.ndarray, params: KernelParams) -> list[np.ndarray]:
    """Derivatives of the (jitter-free) kernel matrix w.r.t. each log-hyperparameter.

    Order matches ``KernelParams.theta()``: one matrix per log-lengthscale, then
    d K / d log(sigma2) = K.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ell = params.lengthscales
    sq = _scaled_sqdist(x, x, ell)
    r = np.sqrt(sq)
    k = _matern52_of_r(r, params.variance)
    # dk/dr = -(5/3) sigma2 r (1 + sqrt5 r) exp(-sqrt5 r); log-lengthscale chain rule
    # brings a factor d_k^2 / (ell_k^2 r), so the r in dk/dr cancels.
    common = (5.0 / 3.0) * params.variance * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    grads = []
    if ell.size == 1:
        grads.append(common * sq)
    else:
        for k_dim in range(ell.size):
            d = (x[:, None, k_dim] - x[None, :, k_dim]) / ell[k_dim]
            grads.append(common * d**2)
    grads.append(k)
    return grads
