"""Command-line interface: validate, fit, compare, study, curves.

Datasets travel as long-format CSV, configuration as a single JSON
document.  Every command is deterministic given (inputs, seed); exit
codes are 0 for success, 1 for runtime failure, 2 for validation
failure.
"""

from __future__ import annotations

import hashlib
import json
import os
import pathlib
import sys

import click
import numpy as np
import pandas as pd

from .data import PanelDataset, validate_long
from .estimator import CopulaQuantileRegressor, DEFAULT_TAU_GRID
from .marginal import PredictorScaler
from .posterior import summarize_beta, summarize_quantile
from .sampler import PosteriorDraws, PriorSpec
from .simulate import SimArm, run_study

DEPENDENCE_MODES = {
    "independent": "independent",
    "copula": "copula",
    "copula-univariate": "copula",
    "copula-multivariate": "copula",
}


def _fail(msg, code):
    click.echo(msg, err=True)
    sys.exit(code)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read {path}: {exc}", 2)


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _estimator_from_config(config, seed=None):
    dep = config.get("dependence", "copula")
    if dep not in DEPENDENCE_MODES:
        _fail(f"unknown dependence mode {dep!r} "
              f"(choose from {sorted(DEPENDENCE_MODES)})", 2)
    priors = PriorSpec(**config["priors"]) if config.get("priors") else None
    return CopulaQuantileRegressor(
        family=config.get("family", "gaussian"),
        M=config.get("M", 2),
        knots=config.get("knots"),
        df=config.get("df", 5.0),
        estimate_df=config.get("estimate_df"),
        dependence=DEPENDENCE_MODES[dep],
        use_random_effects=config.get("use_random_effects", True),
        iterations=config.get("iterations", 2000),
        burn_in=config.get("burn_in"),
        thin=config.get("thin", 1),
        seed=config.get("seed", 0) if seed is None else seed,
        standardize_response=config.get("standardize_response", True),
        scale_predictors=config.get("scale_predictors", True),
        priors=priors)


def _read_validated(data_path, config):
    fixed = config.get("fixed_cols")
    random = config.get("random_cols")
    if not fixed:
        _fail("config must name fixed_cols", 2)
    try:
        df = pd.read_csv(data_path)
    except OSError as exc:
        _fail(f"cannot read {data_path}: {exc}", 2)
    report = validate_long(df, fixed_cols=fixed, random_cols=random or [])
    return df, report, fixed, random or []


@click.group()
def main():
    """Bayesian quantile regression for longitudinal data."""


@main.command()
@click.argument("data_csv", type=click.Path())
@click.argument("config_json", type=click.Path())
def validate(data_csv, config_json):
    """Check a dataset against the schema and report missingness."""
    config = _load_json(config_json)
    _, report, _, _ = _read_validated(data_csv, config)
    click.echo(report.format())
    sys.exit(0 if report.ok else 2)


@main.command()
@click.argument("data_csv", type=click.Path())
@click.argument("config_json", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override config seed")
def fit(data_csv, config_json, out, seed):
    """Run the sampler; write draws, summaries, diagnostics, manifest."""
    config = _load_json(config_json)
    df, report, fixed, random = _read_validated(data_csv, config)
    if not report.ok:
        _fail(report.format(), 2)
    data = PanelDataset.from_long(df, fixed_cols=fixed, random_cols=random)
    est = _estimator_from_config(config, seed=seed)
    out_dir = pathlib.Path(out)
    try:
        est.fit(data)
    except Exception as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        dump = out_dir / "state_dump.json"
        with open(dump, "w") as fh:
            json.dump({"error": repr(exc), "config": config}, fh, indent=2)
        _fail(f"sampler failed: {exc!r} (state dump: {dump})", 1)
    tau_grid = tuple(config.get("tau_grid", DEFAULT_TAU_GRID))
    lpml_value, bad = est.lpml()
    post = est.posterior_
    post.meta["data_hash"] = data.content_hash()
    post.meta["config_hash"] = _config_hash(config)
    post.meta["lpml"] = lpml_value
    post.meta["lpml_unstable_subjects"] = bad
    post.meta["versions"] = {"python": sys.version.split()[0],
                             "numpy": np.__version__}
    post.meta["report"] = {
        "tau_grid": list(tau_grid),
        "param_names": est.param_names_,
        "response_ids": [str(r) for r in est.response_ids_],
        "y_center": est.y_center_.tolist(),
        "y_scale": est.y_scale_.tolist(),
        "scaler_center": est.scaler_.center_.tolist() if est.scaler_ else None,
        "scaler_half_range": (est.scaler_.half_range_.tolist()
                              if est.scaler_ else None),
    }
    post.save(out_dir)
    est.summarize(tau_grid).to_csv(out_dir / "summary.csv", index=False)
    est.diagnostics().to_csv(out_dir / "diagnostics.csv", index=False)
    click.echo(f"LPML {lpml_value:.3f}; outputs in {out_dir}")


def _load_run(run_dir):
    try:
        return PosteriorDraws.load(run_dir)
    except (OSError, KeyError) as exc:
        _fail(f"not a completed run directory {run_dir}: {exc}", 2)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
def compare(run_dirs):
    """Rank completed runs on the same dataset by LPML."""
    rows = []
    for d in run_dirs:
        post = _load_run(d)
        if "lpml" not in post.meta or "data_hash" not in post.meta:
            _fail(f"run {d} has no LPML/data hash in its manifest", 2)
        rows.append({"run": str(d), "lpml": post.meta["lpml"],
                     "data_hash": post.meta["data_hash"],
                     "dependence": post.meta["model"]["dependence"]})
    hashes = {r["data_hash"] for r in rows}
    if len(hashes) > 1:
        _fail("refusing to compare runs fitted to different datasets: "
              + ", ".join(sorted(hashes)), 2)
    table = pd.DataFrame(rows).sort_values("lpml", ascending=False,
                                           kind="stable")
    table["winner"] = ""
    if len(table) > 1:
        table.iloc[0, table.columns.get_loc("winner")] = "*"
    click.echo(table.drop(columns="data_hash").to_string(index=False))


@main.command()
@click.argument("arm_spec_json", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--workers", type=int,
              default=lambda: int(os.environ.get("COPULAQR_WORKERS", "1")),
              help="parallel replicate fan-out "
                   "(default from COPULAQR_WORKERS)")
@click.option("--seed", type=int, default=None,
              help="default seed for arms that omit one")
def study(arm_spec_json, out, workers, seed):
    """Run a Monte Carlo coverage/MSE study from an arm-spec document."""
    spec = _load_json(arm_spec_json)
    try:
        arms = []
        for arm in spec["arms"]:
            arm = dict(arm)
            if seed is not None:
                arm.setdefault("seed", seed)
            arms.append(SimArm(**arm))
    except (KeyError, TypeError, ValueError) as exc:
        _fail(f"bad arm spec: {exc}", 2)
    agg, detail, failures = run_study(
        arms, models=tuple(spec.get("models", ("independent", "copula"))),
        mcmc=spec.get("mcmc"), out_dir=out, workers=workers)
    for f in failures:
        click.echo(f"replicate failed: {f}", err=True)
    click.echo(f"{len(detail)} summary rows over {len(agg)} cells "
               f"-> {pathlib.Path(out) / 'table1.csv'}")
    if len(agg) == 0:
        sys.exit(1)


def _parse_profile(profile, param_names):
    values = {}
    for item in profile.split(","):
        if "=" not in item:
            _fail(f"bad profile entry {item!r}; expected name=value", 2)
        name, val = item.split("=", 1)
        name = name.strip()
        if name not in param_names or name == param_names[0]:
            _fail(f"unknown covariate {name!r}; "
                  f"available: {param_names[1:]}", 2)
        try:
            values[name] = float(val)
        except ValueError:
            _fail(f"non-numeric value for {name!r}: {val!r}", 2)
    missing = [p for p in param_names[1:] if p not in values]
    if missing:
        _fail(f"profile missing covariates: {missing}", 2)
    return np.array([1.0] + [values[p] for p in param_names[1:]])


@main.command()
@click.argument("run_dir", type=click.Path())
@click.option("--profile", required=True,
              help="comma list of name=value covariate settings")
@click.option("--grid", default=None,
              help="comma list of quantile levels in (0, 1)")
@click.option("--out", type=click.Path(), default=None,
              help="output CSV (default: stdout)")
def curves(run_dir, profile, grid, out):
    """Emit Q(tau|x) and beta_p(tau) with credible bands as long CSV."""
    post = _load_run(run_dir)
    rep = post.meta.get("report")
    if rep is None:
        _fail(f"run {run_dir} manifest carries no report block", 2)
    x_raw = _parse_profile(profile, rep["param_names"])
    if grid is not None:
        tau_grid = tuple(float(t) for t in grid.split(","))
    else:
        tau_grid = np.round(np.arange(0.05, 0.951, 0.05), 3)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid <= 0.0) or np.any(tau_grid >= 1.0):
        _fail("quantile grid must lie strictly inside (0, 1)", 2)
    scaler = None
    if rep["scaler_center"] is not None:
        scaler = PredictorScaler()
        scaler.center_ = np.asarray(rep["scaler_center"])
        scaler.half_range_ = np.asarray(rep["scaler_half_range"])
        scaler.n_clipped_ = 0
    y_center = np.asarray(rep["y_center"])
    y_scale = np.asarray(rep["y_scale"])
    beta = summarize_beta(post, tau_grid, scaler=scaler, y_center=y_center,
                          y_scale=y_scale, response_ids=rep["response_ids"],
                          param_names=rep["param_names"])
    beta["kind"] = "beta"
    x_scaled = scaler.transform(x_raw[None])[0] if scaler else x_raw
    q = summarize_quantile(post, tau_grid, x_scaled, y_center=y_center,
                           y_scale=y_scale, response_ids=rep["response_ids"])
    q["parameter"] = "Q"
    q["kind"] = "quantile"
    cols = ["kind", "response", "parameter", "tau", "mean", "lower", "upper"]
    table = pd.concat([beta, q], ignore_index=True)[cols]
    table = table.rename(columns={"mean": "estimate"})
    if out:
        table.to_csv(out, index=False)
        click.echo(f"wrote {out}")
    else:
        click.echo(table.to_csv(index=False), nl=False)


if __name__ == "__main__":
    main()
