"""Command-line pipeline: fit, evaluate, split, simulate, summarize, serve.

Artifacts are plain CSV/JSON.  Exit codes: 0 success, 1 validation or
file errors, 2 fit did not converge (the report is still written).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__, dataio, evaluation, synth
from .dataio import (Cohort, canonical_json, load_model_def, locf_fill,
                     model_def_to_dict, parse_dataset, write_csv,
                     write_dataset_csv)
from .errors import TacroPKError
from .estimation import PriorSpec, fit_population, optimize_prior_weights
from .evaluation import (SUMMARY_COLUMNS, RECORD_COLUMNS, TargetRange,
                         forecast_cohort, nobs_summary_table,
                         records_table, summarize, verdict,
                         weekly_counts_rows, weekly_exposure_report)


def _load_cohort(path: str) -> Cohort:
    return locf_fill(parse_dataset(path))


def _parse_prior_file(path: str) -> PriorSpec:
    import numpy as np
    doc = json.loads(Path(path).read_text())
    return PriorSpec(
        theta_mean=dict(doc.get("theta_mean", {})),
        theta_se=dict(doc.get("theta_se", {})),
        omega_prior=(np.array(doc["omega"], dtype=float)
                     if "omega" in doc else None),
        nu=doc.get("nu", 0.0),
        weights=dict(doc.get("weights", {})))


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


@click.group()
@click.version_option(__version__, prog_name="tacropk")
def main() -> None:
    """Tacrolimus TDM toolkit: popPK fitting, Bayesian forecasting and
    predictive-performance evaluation."""


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("model_def", type=click.Path(exists=True))
@click.option("--prior", "prior_path", type=click.Path(exists=True),
              help="JSON prior block overriding the model file's prior.")
@click.option("--weights", "weight_grid", default=None,
              help="Descending weight grid, e.g. '1,0.5,0.1,0'; "
                   "triggers prior-weight relaxation.")
@click.option("--out", "out_dir", type=click.Path(), default="fit-out",
              show_default=True, help="Artifact directory.")
@click.option("--max-evals", default=2000, show_default=True)
def fit(dataset: str, model_def: str, prior_path: str,
        weight_grid: str, out_dir: str, max_evals: int) -> None:
    """Fit a population model, optionally with an informative prior."""
    try:
        cohort = _load_cohort(dataset)
        definition = load_model_def(model_def)
        prior = definition.prior
        if prior_path:
            prior = _parse_prior_file(prior_path)
        if weight_grid is not None:
            if prior is None:
                _fail(ValueError("--weights requires a prior"))
            grid = [float(v) for v in weight_grid.split(",")]
            prior, result = optimize_prior_weights(
                cohort.patients, definition.model, prior, grid,
                max_evals=max_evals)
        else:
            result = fit_population(cohort.patients, definition.model,
                                    prior, max_evals=max_evals)
    except TacroPKError as exc:
        _fail(exc)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fitted_doc = model_def_to_dict(
        f"{definition.name}-fitted", result.model,
        prior if prior and (prior.theta_mean
                            or prior.omega_prior is not None) else None)
    (out / "fitted-model.json").write_text(canonical_json(fitted_doc))
    report = {
        "converged": result.converged,
        "minus2ll": result.minus2ll,
        "minus2ll_data": result.minus2ll_data,
        "minus2ll_penalty": result.minus2ll_penalty,
        "n_function_evals": result.n_function_evals,
        "excluded_patients": list(result.excluded_patients),
        "flags": list(result.flags),
        "dataset_digest": cohort.provenance.digest,
        "version": __version__,
    }
    if result.condition_report is not None:
        rep = result.condition_report
        report["condition"] = rep.condition
        report["rse"] = rep.rse
        report["eigenvalues"] = list(rep.eigenvalues)
    if prior is not None:
        report["prior_weights"] = dict(prior.weights)
    (out / "fit-report.json").write_text(canonical_json(report))
    status = "converged" if result.converged else "DID NOT converge"
    click.echo(f"fit {status}; -2LL = {result.minus2ll:.4f}; "
               f"artifacts in {out}")
    if not result.converged:
        sys.exit(2)


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("model_def", type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(evaluation.FORECAST_MODES),
              default="next-one", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="eval-out",
              show_default=True)
def evaluate(dataset: str, model_def: str, mode: str,
             out_dir: str) -> None:
    """Replay sequential forecasting and emit PE artifacts."""
    try:
        cohort = _load_cohort(dataset)
        definition = load_model_def(model_def)
        records = forecast_cohort(cohort.patients, definition.model,
                                  mode)
        if not records:
            _fail(ValueError("no prediction records produced"))
        target = TargetRange()
        weekly = weekly_exposure_report(cohort.patients, target)
    except TacroPKError as exc:
        _fail(exc)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "records.csv", RECORD_COLUMNS,
              records_table(records))
    write_csv(out / "summary.csv", SUMMARY_COLUMNS,
              nobs_summary_table(records, definition.name))
    write_csv(out / "boxplot.csv", ("model", "n_obs", "pe_percent"),
              evaluation.boxplot_source(records, definition.name))
    write_csv(out / "weekly.csv", ("week", "below", "within", "above"),
              weekly_counts_rows(weekly))
    overall = summarize(records)
    v = verdict(overall)
    doc = {
        "model": definition.name,
        "mode": mode,
        "n_records": overall.n_records,
        "n_patients": overall.n_patients,
        "mdpe": overall.mdpe,
        "mdape": overall.mdape,
        "f20": overall.f20,
        "f30": overall.f30,
        "satisfactory": v.satisfactory,
        "failed_criteria": list(v.failed_criteria),
        "dataset_digest": cohort.provenance.digest,
        "version": __version__,
    }
    (out / "verdict.json").write_text(canonical_json(doc))
    click.echo(f"{overall.n_records} records from "
               f"{overall.n_patients} patients; MDPE "
               f"{overall.mdpe:.2f}%, MDAPE {overall.mdape:.2f}%, "
               f"F20 {overall.f20:.1f}%, F30 {overall.f30:.1f}%; "
               f"{'satisfactory' if v.satisfactory else 'unsatisfactory'}"
               f"; artifacts in {out}")


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--fraction", default=0.70, show_default=True)
@click.option("--n-estimation", type=int, default=None,
              help="Override the estimation-patient count.")
@click.option("--out-estimation", type=click.Path(),
              default="estimation.csv", show_default=True)
@click.option("--out-prediction", type=click.Path(),
              default="prediction.csv", show_default=True)
def split(dataset: str, fraction: float, n_estimation: int,
          out_estimation: str, out_prediction: str) -> None:
    """Split a dataset into estimation and prediction cohorts."""
    try:
        cohort = parse_dataset(dataset)
        est, pred = dataio.split(cohort, fraction,
                                 n_estimation=n_estimation)
    except TacroPKError as exc:
        _fail(exc)
    write_dataset_csv(est, out_estimation)
    write_dataset_csv(pred, out_prediction)
    click.echo(f"{len(est)} estimation / {len(pred)} prediction "
               f"patients written to {out_estimation}, {out_prediction}")


@main.command()
@click.argument("model_def", type=click.Path(exists=True))
@click.option("--seed", required=True, type=int,
              help="RNG seed; output is bit-reproducible per seed.")
@click.option("--n-patients", default=10, show_default=True)
@click.option("--days", default=14, show_default=True)
@click.option("--dose", default=4.0, show_default=True)
@click.option("--out", "out_path", type=click.Path(),
              default="synthetic.csv", show_default=True)
def simulate(model_def: str, seed: int, n_patients: int, days: int,
             dose: float, out_path: str) -> None:
    """Generate a synthetic cohort CSV from a model definition."""
    try:
        definition = load_model_def(model_def)
        cohort, _ = synth.generate_cohort(
            definition.model, n_patients, seed, n_days=days,
            dose_mg=dose)
    except (TacroPKError, ValueError) as exc:
        _fail(exc)
    write_dataset_csv(cohort, out_path)
    click.echo(f"{n_patients} patients, "
               f"{sum(len(p.usable_observations) for p in cohort.patients)}"
               f" observations written to {out_path}")


@main.command("summarize")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write CSV instead of printing.")
def summarize_cmd(dataset: str, out_path: str) -> None:
    """Demographic and sampling summary of a dataset."""
    try:
        cohort = _load_cohort(dataset)
    except TacroPKError as exc:
        _fail(exc)
    rows = dataio.summarize_cohort(cohort)
    if out_path:
        write_csv(out_path, dataio.SUMMARY_HEADER, rows)
        click.echo(f"summary written to {out_path}")
    else:
        for name, value in rows:
            click.echo(f"{name}: {value}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True,
              envvar="TACROPK_HOST")
@click.option("--port", default=8765, show_default=True,
              envvar="TACROPK_PORT")
@click.option("--data-dir", default="tacropk-data", show_default=True,
              envvar="TACROPK_DATA_DIR",
              help="Per-patient journal directory.")
@click.option("--static-dir", default=None, envvar="TACROPK_STATIC_DIR",
              type=click.Path(file_okay=False),
              help="Built console assets to serve at /. Defaults to "
                   "frontend/dist when it exists.")
def serve(host: str, port: int, data_dir: str,
          static_dir: str | None) -> None:
    """Host the HTTP API for the interactive console."""
    import uvicorn

    from .service import create_app

    static = Path(static_dir) if static_dir else \
        Path(__file__).parents[2] / "frontend" / "dist"
    app = create_app(Path(data_dir),
                     static_dir=static if static.is_dir() else None)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
