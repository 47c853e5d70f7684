"""Command-line front end: fit, cv, grid, mcmc-baseline, ttest.

Configuration comes from a JSON file (see README) with flag overrides; exit
codes are 0 on success, 2 for configuration errors, 3 for data errors, and 4
for training failures.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, DataError, GpvemError, TrainingFailureError
from .harness import (
    ExperimentConfig,
    ResultRecord,
    default_trainer_config,
    grid_surface,
    load_dataset,
    make_likelihood_for_task,
    paired_ttest,
    run_cv,
    standardize,
)
from .kernels import KernelParams, gram
from .mcmc import ais_log_marginal
from .harness import fit_method

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


def _load_config(config_path, dataset, method, folds, seeds) -> ExperimentConfig:
    if config_path:
        config = ExperimentConfig.from_file(config_path)
    else:
        config = ExperimentConfig()
    raw = json.loads(Path(config_path).read_text()) if config_path else {}
    if "trainer" not in raw:
        config = replace(config, trainer=default_trainer_config(config.task))
    if dataset:
        config = replace(config, dataset=dataset)
    if method:
        config = replace(config, method=method)
    if folds:
        config = replace(config, folds=folds)
    if seeds:
        config = replace(config, seeds=tuple(int(s) for s in seeds.split(",")))
    if not config.dataset:
        raise ConfigError("no dataset given (config 'dataset' key or --dataset)")
    return config


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Global seed override.")
@click.option("--out-dir", type=click.Path(), default="results", show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.pass_context
def cli(ctx, seed, out_dir, threads):
    """Non-conjugate GP training and benchmarking toolkit."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, out_dir=Path(out_dir), threads=threads)


common_options = [
    click.option("--config", "config_path", type=click.Path(), default=None),
    click.option("--dataset", type=click.Path(), default=None),
    click.option("--method", type=str, default=None),
]


def _with_options(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@cli.command()
@_with_options
@click.pass_context
def fit(ctx, config_path, dataset, method):
    """Train one method on the full dataset and persist the learned state."""
    config = _load_config(config_path, dataset, method, None, None)
    ds = load_dataset(config.dataset, config.task)
    x = standardize(ds.x_raw)
    model = fit_method(config.method, x, ds.y, config)
    out_dir = ctx.obj["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": json.loads(_config_json(config)),
        "theta": [float(v) for v in model.params.theta()],
        "lik_hypers": [float(v) for v in model.lik.hyper_vector()],
        "stop_reason": model.stop_reason,
    }
    path = out_dir / f"fit_{config.method}.json"
    path.write_text(json.dumps(doc, indent=2))
    click.echo(f"wrote {path}")


@cli.command()
@_with_options
@click.option("--folds", type=int, default=None)
@click.option("--seeds", type=str, default=None, help="Comma-separated seed list.")
@click.pass_context
def cv(ctx, config_path, dataset, method, folds, seeds):
    """Seeded k-fold cross-validation; writes a JSON result document."""
    config = _load_config(config_path, dataset, method, folds, seeds)
    record = run_cv(config, threads=ctx.obj["threads"])
    out_dir = ctx.obj["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"cv_{config.method}_{Path(config.dataset).stem}.json"
    record.to_json(path)
    acc = "" if record.mean_accuracy is None else f"  acc={record.mean_accuracy:.3f}"
    click.echo(
        f"{config.method}: lpd={record.mean_lpd:.4f}±{record.std_lpd:.4f}{acc}"
        f"  ({record.n_failed} failed folds) -> {path}"
    )


@cli.command()
@_with_options
@click.option("--methods", type=str, default=None, help="Comma-separated method list.")
@click.pass_context
def grid(ctx, config_path, dataset, method, methods):
    """Hyperparameter-grid surfaces; one CSV per method."""
    config = _load_config(config_path, dataset, method, None, None)
    method_list = methods.split(",") if methods else None
    surfaces = grid_surface(
        config,
        ctx.obj["out_dir"],
        methods=method_list,
        seed=ctx.obj["seed"],
        threads=ctx.obj["threads"],
    )
    for name, arr in surfaces.items():
        click.echo(f"{name}: {arr.shape[0]} cells")


@cli.command(name="mcmc-baseline")
@_with_options
@click.option("--log-ell", type=float, default=0.0, show_default=True)
@click.option("--log-sigma", type=float, default=0.0, show_default=True)
@click.pass_context
def mcmc_baseline(ctx, config_path, dataset, method, log_ell, log_sigma):
    """Annealed-importance-sampling log marginal likelihood at fixed theta."""
    config = _load_config(config_path, dataset, method or "ais", None, None)
    ds = load_dataset(config.dataset, config.task)
    x = standardize(ds.x_raw)
    params = KernelParams(np.array([log_ell]), 2.0 * log_sigma)
    k = gram(x, params)
    lik = make_likelihood_for_task(config)
    mcfg = replace(config.mcmc, seed=ctx.obj["seed"])
    estimate, per_replicate = ais_log_marginal(k, ds.y, lik, mcfg)
    out_dir = ctx.obj["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "log_ell": log_ell,
        "log_sigma": log_sigma,
        "estimate": estimate,
        "per_replicate": [float(v) for v in per_replicate],
    }
    path = out_dir / "mcmc_baseline.json"
    path.write_text(json.dumps(doc, indent=2))
    click.echo(f"log marginal estimate: {estimate:.4f} -> {path}")


@cli.command()
@click.argument("result_a", type=click.Path(exists=False))
@click.argument("result_b", type=click.Path(exists=False))
@click.option("--metric", type=click.Choice(["lpd", "accuracy"]), default="lpd", show_default=True)
def ttest(result_a, result_b, metric):
    """Paired t-test between two cv result documents (matched fold/seed)."""
    def load(path):
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"result file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return ResultRecord.from_dict(doc)

    rec_a, rec_b = load(result_a), load(result_b)
    key = lambda r: (r.seed, r.fold)
    a_map = {key(r): r for r in rec_a.per_fold if not r.failed}
    b_map = {key(r): r for r in rec_b.per_fold if not r.failed}
    shared = sorted(set(a_map) & set(b_map))
    if len(shared) < 2:
        raise DataError("fewer than two matched folds between the result files")
    pick = (lambda r: r.lpd) if metric == "lpd" else (lambda r: r.accuracy)
    result = paired_ttest([pick(a_map[k]) for k in shared], [pick(b_map[k]) for k in shared])
    verdict = "significant" if result.significant else "not significant"
    if result.degenerate:
        verdict = "degenerate (zero-variance differences); not significant"
    click.echo(f"t={result.t:.4f}  p={result.p:.4f}  {verdict} at 0.05")


def _config_json(config: ExperimentConfig) -> str:
    from dataclasses import asdict

    return json.dumps(asdict(config), default=list)


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_CONFIG)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except TrainingFailureError as exc:
        click.echo(f"training failure: {exc}", err=True)
        sys.exit(EXIT_TRAINING)
    except GpvemError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_TRAINING)


if __name__ == "__main__":
    main()
