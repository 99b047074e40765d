"""Command-line interface.

Verbs: generate, build-cohort, train, evaluate, explain, benchmark.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import jsonschema
import numpy as np
import yaml

from .bench import ExperimentConfig, emit_report, run_cv
from .bench.families import FAMILY_SPECS, fit_family
from .cohort import CodeListRegistry, build_dataset
from .core import Cause, event_time_quantiles, load_dataset, save_dataset
from .exceptions import SurvScopeError
from .explain import kernel_attribution, tree_attribution, aggregate_summary, write_summary_csv
from .metrics import c_index_td, censoring_km, d_calibration, ece
from .models import load_model
from .synth import GeneratorConfig, default_vocabulary, generate_population, load_bundle, save_bundle

DEFAULT_PARAMS = {
    "coxnet": {"alpha": 0.01, "l1_ratio": 0.5},
    "rsf": {"n_estimators": 100, "max_depth": 10, "max_features": "sqrt",
            "min_samples_leaf": 10},
    "gbt": {"n_estimators": 100, "max_depth": 3, "max_features": "sqrt",
            "min_samples_leaf": 10, "learning_rate": 0.1},
    "deepsurv": {"layers": 1, "nodes": 50, "learning_rate": 0.01, "batch_size": 64},
    "dsm": {"distribution": "Weibull", "k": 3, "discount": 1.0, "layers": 1,
            "nodes": 50, "learning_rate": 0.01, "batch_size": 64},
    "dsm-competing": {"distribution": "Weibull", "k": 3, "discount": 1.0,
                      "layers": 1, "nodes": 50, "learning_rate": 0.01,
                      "batch_size": 64},
    "cha2ds2vasc": {},
    "hasbled": {},
}

_CONFIG_ERRORS = (ValueError, KeyError, FileNotFoundError, NotADirectoryError,
                  jsonschema.ValidationError, yaml.YAMLError)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _CONFIG_ERRORS as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(1)
        except SurvScopeError as exc:
            click.echo(f"runtime failure: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"runtime failure: {exc}", err=True)
            sys.exit(2)
    return wrapper


@click.group()
def main():
    """Survival-model benchmark toolkit for linked-administrative-style data."""


@main.command()
@click.option("--config", "config_path", default=None,
              help="Generator configuration YAML; defaults are used when omitted.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_prefix", required=True,
              help="Output prefix for the record bundle files.")
@_handle_errors
def generate(config_path, seed, out_prefix):
    """Generate a synthetic linked-administrative record bundle."""
    cfg = GeneratorConfig.from_yaml(config_path) if config_path else GeneratorConfig()
    bundle = generate_population(cfg, default_vocabulary(), seed)
    paths = save_bundle(bundle, out_prefix)
    click.echo(f"wrote {len(bundle.stays)} episodes, {len(bundle.dispensings)} dispensings, "
               f"{len(bundle.deaths)} deaths across {len(paths)} files")


@main.command("build-cohort")
@click.option("--records", "records_prefix", required=True,
              help="Record-bundle prefix written by `generate`.")
@click.option("--registry", "registry_path", default=None,
              help="Code-list registry YAML; package default when omitted.")
@click.option("--target", type=click.Choice(["composite", "bleeding"]), default="composite",
              show_default=True)
@click.option("--out", "out_path", required=True, help="Output dataset (JSON-Lines).")
@_handle_errors
def build_cohort(records_prefix, registry_path, target, out_path):
    """Run the cohort ETL: selection, features, outcomes, rare filter."""
    bundle = load_bundle(records_prefix)
    registry = (CodeListRegistry.from_yaml(registry_path) if registry_path
                else CodeListRegistry.default())
    ds, report = build_dataset(bundle, registry, target)
    save_dataset(ds, out_path)
    click.echo(f"cohort: {report.included} included of {report.candidates} candidates; "
               f"exclusions {report.excluded or '{}'}; "
               f"{len(ds.feature_names)} features after rare filter")


def _load_params(params_arg) -> dict:
    if not params_arg:
        return {}
    p = Path(params_arg)
    if p.exists():
        return yaml.safe_load(p.read_text())
    return json.loads(params_arg)


@main.command()
@click.option("--dataset", "dataset_path", required=True)
@click.option("--family", required=True, type=click.Choice(sorted(FAMILY_SPECS)))
@click.option("--params", "params_arg", default=None,
              help="Hyperparameters: YAML/JSON file or inline JSON. Family defaults otherwise.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True)
@_handle_errors
def train(dataset_path, family, params_arg, seed, out_path):
    """Fit one model family on a dataset and serialize it."""
    ds = load_dataset(dataset_path)
    params = _load_params(params_arg) or DEFAULT_PARAMS[family]
    registry = CodeListRegistry.default()
    model = fit_family(family, ds, params, seed=seed, context={"registry": registry})
    model.save(out_path)
    click.echo(f"trained {family} on {len(ds)} subjects -> {out_path}")


@main.command()
@click.option("--model", "model_path", required=True)
@click.option("--dataset", "dataset_path", required=True)
@click.option("--out", "out_path", default=None, help="Metrics JSON (stdout if omitted).")
@_handle_errors
def evaluate(model_path, dataset_path, out_path):
    """Evaluate a serialized model at the dataset's three event-time-quantile
    horizons."""
    model = load_model(model_path)
    ds = load_dataset(dataset_path)
    model.check_features(ds.feature_names)
    horizons = event_time_quantiles(ds)
    flags = ds.causes == int(Cause.EVENT)
    weights = censoring_km(ds.times, flags)
    out = {"horizons_days": list(horizons.horizons), "family": model.family,
           "concordance": [], "ece": []}
    for h in horizons:
        risk = model.predict_risk(ds.X, h)
        out["concordance"].append(c_index_td(risk, ds.times, flags, h, weights))
        out["ece"].append(ece(np.clip(risk, 0, 1), ds.times, flags, h).value)
    s_at = model.predict_survival_at_times(ds.X, ds.times)
    out["d_calibration_p"] = d_calibration(np.clip(s_at, 0, 1), flags).p_value
    text = json.dumps(out, indent=1, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


@main.command("explain")
@click.option("--model", "model_path", required=True)
@click.option("--dataset", "dataset_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--horizon-quantile", type=click.Choice(["0.25", "0.50", "0.75"]),
              default="0.25", show_default=True)
@click.option("--budget", type=int, default=512, show_default=True)
@click.option("--background", "background_size", type=int, default=100, show_default=True)
@click.option("--max-subjects", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--top-k", type=int, default=20, show_default=True)
@_handle_errors
def explain_cmd(model_path, dataset_path, out_dir, horizon_quantile, budget,
                background_size, max_subjects, seed, top_k):
    """Shapley attributions of the risk at an event-time-quantile horizon."""
    model = load_model(model_path)
    ds = load_dataset(dataset_path)
    model.check_features(ds.feature_names)
    horizons = event_time_quantiles(ds)
    h = dict(zip(("0.25", "0.50", "0.75"), horizons.horizons))[horizon_quantile]
    rng = np.random.default_rng(seed)
    keep = np.arange(len(ds))
    if len(ds) > max_subjects:
        keep = np.sort(rng.choice(len(ds), size=max_subjects, replace=False))
    ids = tuple(ds.ids()[i] for i in keep)
    if model.family in ("rsf", "gbt"):
        att = tree_attribution(model, ds.X[keep], h, subject_ids=ids)
    else:
        bg_idx = rng.choice(len(ds), size=min(background_size, len(ds)), replace=False)
        att = kernel_attribution(lambda Z: model.predict_risk(Z, h), ds.X[keep],
                                 ds.X[bg_idx], budget=budget, seed=seed, horizon=h,
                                 feature_names=ds.feature_names, subject_ids=ids)
    summary = aggregate_summary([att], k=top_k)
    paths = write_summary_csv(summary, out_dir)
    click.echo(f"wrote {', '.join(str(p) for p in paths)}")


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--workers", type=int, default=None, help="Overrides the config workers.")
@_handle_errors
def benchmark(config_path, out_dir, seed, workers):
    """Run the full nested-CV benchmark and emit table/figure-shaped files."""
    cfg = ExperimentConfig.from_yaml(config_path)
    if seed is not None:
        cfg.seed = seed
    if workers is not None:
        cfg.workers = workers
    result = run_cv(cfg)
    paths = emit_report(result, out_dir)
    for w in result.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"benchmark complete in {result.wall_time_s:.1f}s; "
               f"best family: {result.best_family}; wrote {len(paths)} files to {out_dir}")


if __name__ == "__main__":
    main()
