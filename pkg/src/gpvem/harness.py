"""Experiment front door: dataset ingestion, cross-validation, grid surfaces.

Input files are CSV with a header row and the target in the last column.
Classification targets may be {0, 1} or {-1, +1} and are stored as +-1.
Features are standardized per training fold; the loaded dataset also keeps a
full-set standardized copy for single-split use.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.stats

from . import ep as ep_mod
from . import laplace as laplace_mod
from .errors import ConfigError, DataError, GpvemError, TrainingFailureError
from .kernels import KernelParams, gram
from .likelihoods import BernoulliProbit, Gaussian, QuadratureRule, StudentT
from .mcmc import AisConfig, ais_log_marginal
from .objectives import elbo, ep_energy
from .cvi import CviConfig, cvi_fit
from .sites import predict, predictive_log_density
from .sparse import (
    SparseGram,
    SparseState,
    kmeans_inducing,
    sparse_cvi_fit,
    sparse_elbo,
    sparse_ep_energy,
    sparse_predict,
)
from .trainer import (
    AdamState,
    TrainerConfig,
    adam_step,
    train,
    train_sparse,
)
from .objectives import objective_grad_theta, pack_theta, unpack_theta

TASKS = ("classification", "robust_regression", "regression")
CV_METHODS = ("la", "ep", "vi", "ours", "sparse_vi", "sparse_ours")
GRID_METHODS = CV_METHODS + ("ais",)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class GridSpec:
    log_ell: tuple = (-1.0, 5.0)
    log_sigma: tuple = (-1.0, 5.0)
    shape: tuple = (21, 21)
    test_fraction: float = 0.2
    subsample_fraction: float = 1.0

    def __post_init__(self):
        if self.shape[0] < 2 or self.shape[1] < 2:
            raise ConfigError("grid shape must be at least 2x2")


@dataclass
class SparseSpec:
    num_inducing: int = 500
    alpha: float = 1.0
    kmeans_seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: str = ""
    task: str = "classification"
    method: str = "ours"
    folds: int = 5
    seeds: tuple = (0,)
    kernel: str = "isotropic"
    student_t_dof: float = 3.0
    quadrature_nodes: int = 20
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sparse: SparseSpec = field(default_factory=SparseSpec)
    mcmc: AisConfig = field(default_factory=AisConfig)
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.kernel not in ("isotropic", "ard"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2 for cross-validation")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        known = {
            "dataset", "task", "method", "folds", "seeds", "kernel",
            "student_t_dof", "quadrature_nodes", "trainer", "sparse", "mcmc", "grid",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "trainer" in raw:
                raw["trainer"] = TrainerConfig(**raw["trainer"])
            if "sparse" in raw:
                raw["sparse"] = SparseSpec(**raw["sparse"])
            if "mcmc" in raw:
                raw["mcmc"] = AisConfig(**raw["mcmc"])
            if "grid" in raw:
                grid = dict(raw["grid"])
                for key in ("log_ell", "log_sigma", "shape"):
                    if key in grid:
                        grid[key] = tuple(grid[key])
                raw["grid"] = GridSpec(**grid)
            if "seeds" in raw:
                raw["seeds"] = tuple(int(s) for s in raw["seeds"])
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)


def default_trainer_config(task: str) -> TrainerConfig:
    """Task-specific training defaults: step sizes and iteration caps.

    The caps bound the number of outer E/M iterations; the relative-change
    and energy-decrease criteria normally stop training far earlier.
    """
    if task == "robust_regression":
        return TrainerConfig(rho_e=0.001, rho_m=0.001, k_outer=2000, max_total_steps=2000 * 40)
    if task == "regression":
        return TrainerConfig(rho_e=1.0, rho_m=0.01)
    return TrainerConfig(rho_e=0.1, rho_m=0.01, k_outer=10000, max_total_steps=10000 * 40)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


@dataclass
class Dataset:
    """Raw features, +-1 / real targets, and a full-set standardized copy."""

    x_raw: np.ndarray
    y: np.ndarray
    task: str
    x: np.ndarray

    @property
    def n(self) -> int:
        return self.x_raw.shape[0]

    @property
    def d(self) -> int:
        return self.x_raw.shape[1]


def standardize(train_x: np.ndarray, *others: np.ndarray):
    """Zero-mean unit-variance per feature using training statistics.

    Constant columns get unit fallback scale instead of dividing by zero.
    """
    mean = train_x.mean(axis=0)
    scale = train_x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    out = [(train_x - mean) / scale]
    out.extend((o - mean) / scale for o in others)
    return out[0] if not others else tuple(out)


def load_dataset(path, task: str) -> Dataset:
    """Parse a CSV file (header, final column = target) into a Dataset."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        width = len(header)
        if width < 2:
            raise DataError(f"{path}: need at least one feature column plus the target")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}:{lineno}: ragged row ({len(row)} fields, expected {width})"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    x_raw, y = data[:, :-1], data[:, -1]
    if task == "classification":
        labels = set(np.unique(y).tolist())
        if labels <= {0.0, 1.0}:
            y = np.where(y > 0.5, 1.0, -1.0)
        elif labels <= {-1.0, 1.0}:
            y = y.copy()
        else:
            raise DataError(f"{path}: classification labels must be {{0,1}} or {{-1,+1}}, got {sorted(labels)}")
        if np.unique(y).size < 2:
            raise DataError(f"{path}: single-class target")
    return Dataset(x_raw=x_raw, y=y, task=task, x=standardize(x_raw))


def fold_indices(n: int, folds: int, seed: int):
    """Deterministic fold assignment: a seeded permutation in contiguous chunks."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


def make_likelihood_for_task(config: ExperimentConfig):
    if config.task == "classification":
        return BernoulliProbit()
    if config.task == "robust_regression":
        return StudentT(dof=config.student_t_dof, log_scale=0.0)
    return Gaussian(0.0)


def init_kernel_params(config: ExperimentConfig, d: int) -> KernelParams:
    """Unit lengthscale(s) and magnitude."""
    size = d if config.kernel == "ard" else 1
    return KernelParams(np.zeros(size), 0.0)


# --------------------------------------------------------------------------
# per-method fitting
# --------------------------------------------------------------------------


@dataclass
class FittedModel:
    """Everything prediction and reporting need after one training run."""

    method: str
    params: KernelParams
    lik: object
    stop_reason: str
    predict_fn: object = field(repr=False)

    def predictive(self, xstar):
        return self.predict_fn(xstar)


def _adam_maximize(value_fn, theta0, lr, steps, tol=1e-6, fd_step=1e-5):
    """FD-gradient Adam ascent used by the LA and EP baselines.

    ``value_fn(theta)`` returns the objective; evaluation errors reject the
    proposed step with halving, mirroring the trainer's M-step policy.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    adam = AdamState.zeros(theta.size)
    stop_reason = "budget_exhausted"
    for _ in range(steps):
        grad = np.empty_like(theta)
        try:
            for j in range(theta.size):
                hi = theta.copy()
                lo = theta.copy()
                hi[j] += fd_step
                lo[j] -= fd_step
                grad[j] = (value_fn(hi) - value_fn(lo)) / (2.0 * fd_step)
        except GpvemError:
            stop_reason = "m_objective_decreased"
            break
        adam, delta = adam_step(adam, grad, lr)
        accepted = False
        for _ in range(6):
            try:
                value_fn(theta + delta)
                theta = theta + delta
                accepted = True
                break
            except GpvemError:
                delta = 0.5 * delta
        if not accepted:
            break
        if np.max(np.abs(delta) / (1.0 + np.abs(theta))) < tol:
            stop_reason = "converged"
            break
    return theta, stop_reason


def fit_method(
    method: str,
    x_train: np.ndarray,
    y_train: np.ndarray,
    config: ExperimentConfig,
) -> FittedModel:
    """Train one method on a (standardized) training fold."""
    if method not in CV_METHODS:
        raise ConfigError(f"method {method!r} cannot be cross-validated")
    rule = QuadratureRule.gauss_hermite(config.quadrature_nodes)
    lik = make_likelihood_for_task(config)
    params = init_kernel_params(config, x_train.shape[1])
    cfg = config.trainer

    if method in ("vi", "ours"):
        from dataclasses import replace

        cfg = replace(cfg, m_objective="elbo" if method == "vi" else "ep_energy")
        result = train(x_train, y_train, lik, params, cfg, rule)
        k = gram(x_train, result.params)

        def predict_fn(xstar, result=result, k=k):
            return predict(k, x_train, result.sites, result.params, xstar)

        return FittedModel(method, result.params, result.lik, result.trace.stop_reason, predict_fn)

    if method in ("sparse_vi", "sparse_ours"):
        from dataclasses import replace

        cfg = replace(cfg, m_objective="elbo" if method == "sparse_vi" else "ep_energy")
        m = min(config.sparse.num_inducing, x_train.shape[0])
        z = kmeans_inducing(x_train, m, seed=config.sparse.kmeans_seed)
        result = train_sparse(
            x_train, y_train, lik, params, z, cfg, rule, alpha=config.sparse.alpha
        )
        kernels = SparseGram.build(x_train, result.state.z, result.params)

        def predict_fn(xstar, result=result, kernels=kernels):
            return sparse_predict(result.state, kernels, result.params, xstar)

        return FittedModel(method, result.params, result.lik, result.trace.stop_reason, predict_fn)

    # LA / EP baselines: Adam on the method's own energy, refitting per eval.
    theta0 = pack_theta(params, lik)
    steps = max(1, cfg.max_total_steps // (cfg.j_e + cfg.j_m)) * cfg.j_m
    steps = min(steps, cfg.k_outer * cfg.j_m)

    if method == "la":

        def la_value(theta):
            p, l = unpack_theta(theta, params, lik)
            k = gram(x_train, p)
            fit = laplace_mod.laplace_fit(k, y_train, l)
            return laplace_mod.laplace_energy(k, fit, y_train, l).value

        theta_hat, stop = _adam_maximize(la_value, theta0, cfg.rho_m, steps)
        p_hat, l_hat = unpack_theta(theta_hat, params, lik)
        k = gram(x_train, p_hat)
        fit = laplace_mod.laplace_fit(k, y_train, l_hat)
        sites = laplace_mod.laplace_sites(k, fit, y_train, l_hat)

        def predict_fn(xstar, k=k, sites=sites, p_hat=p_hat):
            return predict(k, x_train, sites, p_hat, xstar)

        return FittedModel(method, p_hat, l_hat, stop, predict_fn)

    # method == "ep": warm-started EP refits per energy evaluation
    warm = {"sites": None}

    def ep_value(theta):
        p, l = unpack_theta(theta, params, lik)
        k = gram(x_train, p)
        result = ep_mod.ep_fit(k, y_train, l, ep_mod.EpConfig(), rule, init_sites=warm["sites"])
        warm["sites"] = result.sites
        return ep_energy(k, result.sites, y_train, l, rule).value

    theta_hat, stop = _adam_maximize(ep_value, theta0, cfg.rho_m, steps)
    p_hat, l_hat = unpack_theta(theta_hat, params, lik)
    k = gram(x_train, p_hat)
    result = ep_mod.ep_fit(k, y_train, l_hat, ep_mod.EpConfig(), rule, init_sites=warm["sites"])

    def predict_fn(xstar, k=k, result=result, p_hat=p_hat):
        return predict(k, x_train, result.sites, p_hat, xstar)

    return FittedModel(method, p_hat, l_hat, stop, predict_fn)


# --------------------------------------------------------------------------
# metrics and cross-validation
# --------------------------------------------------------------------------


def _fold_metrics(model: FittedModel, lik, x_test, y_test, config: ExperimentConfig):
    rule = QuadratureRule.gauss_hermite(config.quadrature_nodes)
    fmean, fvar = model.predictive(x_test)
    lpd = float(np.mean(predictive_log_density(lik, y_test, fmean, fvar, rule)))
    accuracy = None
    if config.task == "classification":
        prob_pos = scipy.stats.norm.cdf(fmean / np.sqrt(1.0 + fvar))
        # ties at 0.5 go to +1
        pred = np.where(prob_pos >= 0.5, 1.0, -1.0)
        accuracy = float(np.mean(pred == y_test))
    return lpd, accuracy


@dataclass
class FoldRecord:
    seed: int
    fold: int
    lpd: float
    accuracy: float | None
    theta: list
    lik_hypers: list
    stop_reason: str
    n_test: int
    failed: bool = False
    error: str | None = None
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class ResultRecord:
    method: str
    task: str
    dataset: str
    per_fold: list
    mean_lpd: float
    std_lpd: float
    mean_accuracy: float | None
    std_accuracy: float | None
    n_failed: int

    def to_json(self, path=None):
        doc = asdict(self)
        text = json.dumps(doc, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultRecord":
        doc = dict(doc)
        doc["per_fold"] = [FoldRecord(**fr) for fr in doc["per_fold"]]
        return cls(**doc)


def aggregate_records(records) -> dict:
    good = [r for r in records if not r.failed]
    lpds = np.array([r.lpd for r in good], dtype=float)
    out = {
        "mean_lpd": float(np.mean(lpds)) if good else math.nan,
        "std_lpd": float(np.std(lpds)) if good else math.nan,
        "n_failed": sum(r.failed for r in records),
    }
    accs = [r.accuracy for r in good if r.accuracy is not None]
    out["mean_accuracy"] = float(np.mean(accs)) if accs else None
    out["std_accuracy"] = float(np.std(accs)) if accs else None
    return out


def _run_fold(config, dataset, seed, fold, train_idx, test_idx):
    x_train, x_test = standardize(dataset.x_raw[train_idx], dataset.x_raw[test_idx])
    y_train, y_test = dataset.y[train_idx], dataset.y[test_idx]
    started = time.perf_counter()
    try:
        model = fit_method(config.method, x_train, y_train, config)
        lpd, accuracy = _fold_metrics(model, model.lik, x_test, y_test, config)
        return FoldRecord(
            seed=seed,
            fold=fold,
            lpd=lpd,
            accuracy=accuracy,
            theta=[float(v) for v in model.params.theta()],
            lik_hypers=[float(v) for v in model.lik.hyper_vector()],
            stop_reason=model.stop_reason,
            n_test=int(test_idx.size),
            wall_time=time.perf_counter() - started,
        )
    except GpvemError as exc:
        return FoldRecord(
            seed=seed,
            fold=fold,
            lpd=math.nan,
            accuracy=None,
            theta=[],
            lik_hypers=[],
            stop_reason="failed",
            n_test=int(test_idx.size),
            failed=True,
            error=f"{type(exc).__name__}: {exc}",
            wall_time=time.perf_counter() - started,
        )


def run_cv(config: ExperimentConfig, threads: int = 1) -> ResultRecord:
    """Seeded k-fold cross-validation of one method over one dataset."""
    if config.method == "ais":
        raise ConfigError("AIS estimates the marginal likelihood; it is not a CV method")
    dataset = load_dataset(config.dataset, config.task)
    jobs = []
    for seed in config.seeds:
        folds = fold_indices(dataset.n, config.folds, seed)
        for fold, test_idx in enumerate(folds):
            train_idx = np.setdiff1d(np.arange(dataset.n), test_idx)
            jobs.append((seed, fold, train_idx, test_idx))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(
                pool.map(lambda j: _run_fold(config, dataset, *j), jobs)
            )
    else:
        records = [_run_fold(config, dataset, *j) for j in jobs]
    records.sort(key=lambda r: (r.seed, r.fold))
    agg = aggregate_records(records)
    return ResultRecord(
        method=config.method,
        task=config.task,
        dataset=str(config.dataset),
        per_fold=records,
        mean_lpd=agg["mean_lpd"],
        std_lpd=agg["std_lpd"],
        mean_accuracy=agg["mean_accuracy"],
        std_accuracy=agg["std_accuracy"],
        n_failed=agg["n_failed"],
    )


# --------------------------------------------------------------------------
# paired t-test
# --------------------------------------------------------------------------


@dataclass
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False


def paired_ttest(a, b, alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test; zero-variance differences are flagged degenerate."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired_ttest needs two equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("paired_ttest needs at least two pairs")
    d = a - b
    sd = np.std(d, ddof=1)
    if sd == 0.0:
        return TTestResult(t=0.0, p=1.0, significant=False, degenerate=True)
    t = float(np.mean(d) / (sd / np.sqrt(n)))
    p = 2.0 * float(scipy.stats.t.sf(abs(t), df=n - 1))
    return TTestResult(t=t, p=p, significant=p < alpha)


# --------------------------------------------------------------------------
# hyperparameter grid surfaces
# --------------------------------------------------------------------------

SURFACE_HEADER = "log_ell,log_sigma,objective_per_n,test_lpd_per_n"


def _grid_cell(method, log_ell, log_sigma, x_train, y_train, x_test, y_test, config, rule):
    """Fixed-theta inference at one grid cell: (objective/n, test LPD per point)."""
    params = KernelParams(np.array([log_ell]), 2.0 * log_sigma)
    lik = make_likelihood_for_task(config)
    n = y_train.size
    try:
        if method == "ais":
            k = gram(x_train, params)
            est, _ = ais_log_marginal(k, y_train, lik, config.mcmc)
            return est / n, math.nan
        if method in ("vi", "ours"):
            k = gram(x_train, params)
            fit = cvi_fit(k, y_train, lik, CviConfig(rho=config.trainer.rho_e, steps=500), rule)
            if method == "vi":
                objective = elbo(k, fit.sites, y_train, lik, rule).value
            else:
                objective = ep_energy(k, fit.sites, y_train, lik, rule).value
            fmean, fvar = predict(k, x_train, fit.sites, params, x_test)
        elif method == "ep":
            k = gram(x_train, params)
            fit = ep_mod.ep_fit(k, y_train, lik, ep_mod.EpConfig(), rule)
            objective = ep_energy(k, fit.sites, y_train, lik, rule).value
            fmean, fvar = predict(k, x_train, fit.sites, params, x_test)
        elif method == "la":
            k = gram(x_train, params)
            fit = laplace_mod.laplace_fit(k, y_train, lik)
            objective = laplace_mod.laplace_energy(k, fit, y_train, lik).value
            sites = laplace_mod.laplace_sites(k, fit, y_train, lik)
            fmean, fvar = predict(k, x_train, sites, params, x_test)
        elif method in ("sparse_vi", "sparse_ours"):
            m = min(config.sparse.num_inducing, n)
            z = kmeans_inducing(x_train, m, seed=config.sparse.kmeans_seed)
            kernels = SparseGram.build(x_train, z, params)
            state = SparseState.near_prior(z, n)
            state, _, _ = sparse_cvi_fit(
                state, kernels, y_train, lik, rho=config.trainer.rho_e, steps=500, rule=rule
            )
            if method == "sparse_vi":
                objective = sparse_elbo(state, kernels, y_train, lik, rule).value
            else:
                objective = sparse_ep_energy(
                    state, kernels, y_train, lik, config.sparse.alpha, rule
                ).value
            fmean, fvar = sparse_predict(state, kernels, params, x_test)
        else:
            raise ConfigError(f"unknown grid method {method!r}")
        lpd = float(np.mean(predictive_log_density(lik, y_test, fmean, fvar, rule)))
        return objective / n, lpd
    except GpvemError:
        return math.nan, math.nan


def grid_surface(
    config: ExperimentConfig,
    out_dir,
    methods=None,
    seed: int = 0,
    threads: int = 1,
):
    """Evaluate objective / predictive surfaces over the (log ell, log sigma) grid.

    Emits one CSV per method (sorted rows, 17-significant-digit floats) and
    returns {method: array of shape (cells, 4)}. Per-cell failures become NaN
    rows rather than aborting the sweep.
    """
    methods = [config.method] if methods is None else list(methods)
    for method in methods:
        if method not in GRID_METHODS:
            raise ConfigError(f"unknown grid method {method!r}")
    dataset = load_dataset(config.dataset, config.task)
    rng = np.random.default_rng(seed)
    idx = np.arange(dataset.n)
    if config.grid.subsample_fraction < 1.0:
        keep = max(4, int(round(dataset.n * config.grid.subsample_fraction)))
        idx = np.sort(rng.choice(dataset.n, size=keep, replace=False))
    n_test = max(1, int(round(idx.size * config.grid.test_fraction)))
    test_pick = rng.choice(idx.size, size=n_test, replace=False)
    test_idx = idx[np.sort(test_pick)]
    train_idx = np.setdiff1d(idx, test_idx)
    x_train, x_test = standardize(dataset.x_raw[train_idx], dataset.x_raw[test_idx])
    y_train, y_test = dataset.y[train_idx], dataset.y[test_idx]

    ells = np.linspace(*config.grid.log_ell, config.grid.shape[0])
    sigmas = np.linspace(*config.grid.log_sigma, config.grid.shape[1])
    cells = [(le, ls) for le in ells for ls in sigmas]
    rule = QuadratureRule.gauss_hermite(config.quadrature_nodes)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    surfaces = {}
    for method in methods:
        def work(cell):
            le, ls = cell
            obj, lpd = _grid_cell(
                method, le, ls, x_train, y_train, x_test, y_test, config, rule
            )
            return le, ls, obj, lpd

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(work, cells))
        else:
            rows = [work(c) for c in cells]
        rows.sort(key=lambda r: (r[0], r[1]))
        arr = np.asarray(rows, dtype=float)
        surfaces[method] = arr
        path = out_dir / f"surface_{method}_seed{seed}.csv"
        with open(path, "w") as fh:
            fh.write(SURFACE_HEADER + "\n")
            for row in arr:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return surfaces


def read_surface(path) -> np.ndarray:
    """Round-tripping reader for the surface CSV format."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SURFACE_HEADER:
            raise DataError(f"{path}: unexpected surface header {header!r}")
        return np.loadtxt(fh, delimiter=",", ndmin=2)


def surface_argmax(surface: np.ndarray, column: int = 2):
    """Grid cell (log_ell, log_sigma) with the largest finite value in a column."""
    values = surface[:, column]
    finite = np.isfinite(values)
    if not finite.any():
        raise GpvemError("surface has no finite cells")
    best = np.flatnonzero(finite)[np.argmax(values[finite])]
    return surface[best, 0], surface[best, 1]
