"""Synthetic benchmark generators and CSV helpers for the experiment harness."""

from __future__ import annotations

import csv

import numpy as np

from .kernels import KernelParams, gram


def write_csv(path, x: np.ndarray, y: np.ndarray):
    """Write a harness-format CSV: header row, features, target in the last column."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(x.shape[1])] + ["target"])
        for row, target in zip(x, y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    return path


def neal_synthetic(n: int = 100, seed: int = 0, noise_sd: float = 0.1,
                   outlier_sd: float = 1.0, outlier_fraction: float = 0.05):
    """1-D robust-regression benchmark: smooth trend plus rare large outliers.

    f(x) = 0.3 + 0.4 x + 0.5 sin(2.7 x) + 1.1 / (1 + x^2) with standard-normal
    inputs; most observations carry small Gaussian noise, a seeded few are
    drawn with ``outlier_sd`` instead.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    f = 0.3 + 0.4 * x + 0.5 * np.sin(2.7 * x) + 1.1 / (1.0 + x**2)
    sd = np.where(rng.uniform(size=n) < outlier_fraction, outlier_sd, noise_sd)
    y = f + sd * rng.standard_normal(n)
    return x[:, None], y


def gp_classification_synthetic(
    n: int = 100,
    d: int = 2,
    seed: int = 0,
    lengthscale: float = 1.0,
    variance: float = 2.0,
):
    """Binary labels sampled from a probit-GP: y = +1 with probability Phi(f)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    params = KernelParams(np.log([lengthscale]), np.log(variance))
    k = gram(x, params)
    f = k.chol @ rng.standard_normal(n)
    from scipy.special import ndtr

    y = np.where(rng.uniform(size=n) < ndtr(f), 1.0, 0.0)
    if np.unique(y).size < 2:
        # degenerate draw; flip the most extreme point to keep both classes
        y[np.argmin(f)] = 1.0 - y[np.argmin(f)]
    return x, y


def gp_regression_synthetic(
    n: int = 40,
    d: int = 2,
    seed: int = 0,
    lengthscale: float = 1.0,
    variance: float = 0.5,
    noise_sd: float = 0.5,
):
    """Draw (X, y) from the conjugate model itself; used for oracle checks."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    params = KernelParams(np.log([lengthscale]), np.log(variance))
    k = gram(x, params)
    f = k.chol @ rng.standard_normal(n)
    y = f + noise_sd * rng.standard_normal(n)
    return x, y
