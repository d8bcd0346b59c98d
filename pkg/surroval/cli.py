"""
surroval command line.

Usage:
    surroval fit-tte --data ovarian.csv --n-knots 8 --indicator-alpha 0 --nb-mc 500 --scale 0.0027397 --auto-kappa
    surroval fit-tte --data gastric.csv --mediation --g-nknots 1 --pte-times 1.5:2:30 --pte-boot --kappa-s 1e5 --kappa-t 1e5
    surroval fit-longi --data surv.csv --data-longi longi.csv --link current_level --kappa 1000
    surroval simulate --model tte --k-trials 10 --n-per-trial 200 --out-dir sim
    surroval report --out-dir surroval_out

Every option can also be given in a flat key=value config file (--config or
SURROVAL_CONFIG), using dotted names: `n.knots = 8`, `pte.nboot = 1000`.
Command-line values win over environment variables, which win over the file.

Exit codes: 0 converged, 2 optimizer hit maxit (results still written),
1 input or configuration error, 3 unrecoverable numerical failure.
"""

import json
import logging
import sys
import time
from functools import wraps
from pathlib import Path

import click
import pandas as pd

from . import __version__
from .config import build_run_config, get_config, load_config_file
from .data import load_longitudinal, load_tte_dataset, recode_composite, subsample, write_longitudinal, write_tte_dataset
from .errors import ConfigError, InputError, NumericalError
from .model_long import fit_model2, marker_summary
from .model_tte import fit_model1
from .simulate import (
    Scenario,
    reference_model1_params,
    reference_model2_params,
    simulate_model1,
    simulate_model2,
)
from .surrogacy import evaluate_longitudinal, evaluate_tte, mediation_times
from .utils.formatting import fit_to_dict, manifest, summary_text, write_json
from .utils.parallel import set_threads

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_NUMERICAL = 3


# -------------------------
# Option groups
# -------------------------


def _options(*decorators):
    def apply(fn):
        for decorator in reversed(decorators):
            fn = decorator(fn)
        return fn

    return apply


integration_options = _options(
    click.option("--nb-mc", type=int, help="MC points for the trial-level random effects."),
    click.option("--nb-gh", type=int, help="Gauss-Hermite nodes for the individual frailty."),
    click.option("--nb-gh2", type=int, help="Gauss-Hermite nodes for the marker random effects (standard GH)."),
    click.option("--adaptive-nodes", "n_nodes_adaptive", type=int, help="Nodes for pseudo-adaptive GH."),
    click.option("--nb-mc-kendall", type=int, help="MC points for Kendall's tau."),
    click.option("--seed", type=int, help="Seed for every random stream (default 0)."),
    click.option("--antithetic/--no-antithetic", default=None),
)

limit_options = _options(
    click.option("--limparam", type=float),
    click.option("--limlogl", type=float),
    click.option("--limderiv", type=float),
    click.option("--maxit", type=int),
)

mediation_options = _options(
    click.option("--pte-times", help="Times for PTE: 'start:end:count' or a comma-separated list."),
    click.option("--pte-ntimes", type=int),
    click.option("--pte-nmc", type=int),
    click.option("--pte-boot/--no-pte-boot", default=None),
    click.option("--pte-nboot", type=int),
    click.option("--pte-boot-nmc", type=int),
    click.option("--tte-floor", type=float),
)

report_options = _options(
    click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path)),
    click.option("--scale", type=float, help="Multiply all times by this factor (1/365 turns days into years)."),
    click.option("--nboot-kendall", type=int, help="Parametric bootstrap replicates for tau and R2 intervals."),
    click.option("--max-reject-fraction", type=float),
    click.option("--ste-level", type=float),
    click.option("--ste-var/--no-ste-var", "ste_include_var", default=None),
    click.option("--decimals", type=int),
    click.option("--plots/--no-plots", default=None),
)


def _given(params: dict, keys) -> dict:
    """Values from the command line, then env/config file, skipping the unset ones."""
    out = {}
    for key in keys:
        value = params.get(key)
        if value is None:
            value = get_config(key)
        if value is not None:
            out[key] = value
    return out


def _config_values(command: str, params: dict) -> dict:
    values = _given(
        params,
        (
            "data",
            "data_longi",
            "out_dir",
            "scale",
            "recode_composite",
            "subsample",
            "ste_level",
            "ste_include_var",
            "decimals",
            "plots",
        ),
    )
    values["command"] = command
    values["integration"] = _given(
        params, ("nb_mc", "nb_gh", "nb_gh2", "n_nodes_adaptive", "nb_mc_kendall", "seed", "antithetic")
    )
    values["integration"]["threads"] = params.get("threads")
    values["limits"] = _given(params, ("limparam", "limlogl", "limderiv", "maxit"))
    values["mediation"] = _given(
        params, ("pte_times", "pte_ntimes", "pte_nmc", "pte_boot", "pte_nboot", "pte_boot_nmc", "tte_floor")
    )
    values["bootstrap"] = _given(params, ("nboot_kendall", "max_reject_fraction"))
    return values


def _init_overrides(pairs) -> dict[str, str]:
    out = {}
    for key in ("theta", "sigma_ss", "sigma_tt", "sigma_st", "gamma", "alpha", "zeta", "betas", "betat"):
        value = get_config(f"{key}_init")
        if value is not None:
            out[key] = value
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError("init", f"expected NAME=VALUE, got '{pair}'")
        name, value = pair.split("=", 1)
        out[name.strip().replace(".", "_")] = value.strip()
    return out


def _configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )


def handle_errors(fn):
    """Map library errors onto exit codes with a one-line message."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InputError as err:
            logger.error("%s", err)
            click.echo(f"Error: {err}", err=True)
            sys.exit(EXIT_INPUT)
        except NumericalError as err:
            logger.error("Numerical failure: %s", err)
            click.echo(f"Numerical failure: {err}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


# -------------------------
# Output
# -------------------------


def _write_run(run, fit, report, curves, extra_tables: dict, started: float, figures: list) -> int:
    out_dir = run.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    write_json(out_dir / "fit.json", fit_to_dict(fit, run.ste_level))
    outputs.append("fit.json")
    write_json(out_dir / "surrogacy.json", report.to_dict())
    outputs.append("surrogacy.json")

    curves_df = None
    if curves is not None:
        curves_df = curves.to_frame()
        curves_df.to_csv(out_dir / "curves.csv", index=False)
        outputs.append("curves.csv")
    for name, table in extra_tables.items():
        if table is not None:
            table.to_csv(out_dir / name, index=False)
            outputs.append(name)

    # the text is rendered from the files just written
    fit_json = json.loads((out_dir / "fit.json").read_text())
    surrogacy_json = json.loads((out_dir / "surrogacy.json").read_text())
    (out_dir / "summary.txt").write_text(summary_text(fit_json, surrogacy_json, run.decimals, curves_df))
    outputs.append("summary.txt")
    outputs += [p.name for p in figures]

    write_json(
        out_dir / "manifest.json",
        manifest(
            json.loads(run.json()),
            run.integration.seed,
            __version__,
            time.perf_counter() - started,
            outputs + ["manifest.json"],
        ),
    )
    logger.info("Wrote %d files to %s", len(outputs) + 1, out_dir)
    if not fit.converged:
        logger.warning("Optimizer did not converge; results are the best iterate found")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _figures(run, fit, curves, gamma_table, horizon: float, labels: dict[str, str]) -> list[Path]:
    if not run.plots:
        return []
    from .utils import plots

    figures = []
    frames = {label: plots.baseline_frame(fit, which, horizon, run.ste_level) for which, label in labels.items()}
    figures.append(plots.plot_baselines(frames, run.out_dir / "baseline.svg"))
    if gamma_table is not None:
        figures.append(plots.plot_gamma(gamma_table, run.out_dir / "gamma.svg"))
    if curves is not None:
        figures.append(plots.plot_mediation(curves.to_frame(), run.out_dir / "mediation.svg"))
    return figures


# -------------------------
# Commands
# -------------------------


@click.group()
@click.version_option(__version__, prog_name="surroval")
@click.option("--config", "config_path", envvar="SURROVAL_CONFIG", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--log-level", envvar="SURROVAL_LOG_LEVEL", default="INFO", show_default=True)
@click.option("--threads", envvar="SURROVAL_THREADS", type=click.IntRange(min=1), help="Worker thread cap.")
@click.pass_context
def main(ctx, config_path, log_level, threads):
    """Surrogate endpoint evaluation with joint frailty and joint longitudinal models."""
    _configure_logging(log_level)
    if config_path is not None:
        try:
            load_config_file(config_path)
        except InputError as err:
            click.echo(f"Error: {err}", err=True)
            sys.exit(EXIT_INPUT)
    set_threads(threads)
    ctx.obj = {"threads": threads}


@main.command("fit-tte")
@click.option("--data", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--recode-composite/--no-recode-composite", default=None, help="Censor surrogate events tied with death.")
@click.option("--subsample", type=float, help="Analyse a random fraction of the subjects.")
@click.option("--n-knots", type=int)
@click.option("--placement", type=click.Choice(["equidistant", "percentile"]))
@click.option("--kappa-s", type=float)
@click.option("--kappa-t", type=float)
@click.option("--auto-kappa/--no-auto-kappa", default=None)
@click.option("--indicator-zeta", "estimate_zeta", type=click.IntRange(0, 1))
@click.option("--indicator-alpha", "estimate_alpha", type=click.IntRange(0, 1))
@click.option("--frail-base", "include_trial_frailty", type=click.IntRange(0, 1))
@click.option("--mediation/--no-mediation", default=None)
@click.option("--g-nknots", type=int)
@click.option("--init", "init_pairs", multiple=True, help="Starting value NAME=VALUE, e.g. theta=1.5.")
@integration_options
@limit_options
@mediation_options
@report_options
@click.pass_context
@handle_errors
def fit_tte(ctx, init_pairs, **params):
    """Fit the joint surrogate/final time-to-event model and evaluate surrogacy."""
    started = time.perf_counter()
    params["threads"] = ctx.obj["threads"]
    values = _config_values("fit-tte", params)
    values["model1"] = _given(
        params,
        (
            "n_knots",
            "placement",
            "kappa_s",
            "kappa_t",
            "auto_kappa",
            "estimate_zeta",
            "estimate_alpha",
            "include_trial_frailty",
            "mediation",
            "g_nknots",
        ),
    )
    values["model1"]["init"] = _init_overrides(init_pairs)
    run = build_run_config(values)

    ds = load_tte_dataset(run.data, run.scale)
    if ds.covariates:
        logger.warning("Ignoring covariates %s: the time-to-event model adjusts on treatment only", list(ds.covariates))
    if run.recode_composite:
        ds = recode_composite(ds)
    if run.subsample is not None:
        ds = subsample(ds, run.subsample, run.integration.seed)

    # reject pte_times before the fit
    if run.model1.mediation:
        mediation_times(run.mediation, ds.column("time_t"), ds.column("status_t"))
    fit = fit_model1(ds, run.model1, run.integration, run.limits)
    report, curves, gamma_table = evaluate_tte(fit, ds, run)
    horizon = float(ds.column("time_t").max())
    figures = _figures(run, fit, curves, gamma_table, horizon, {"s": "surrogate", "t": "final"})
    sys.exit(_write_run(run, fit, report, curves, {"gamma.csv": gamma_table}, started, figures))


@main.command("fit-longi")
@click.option("--data", type=click.Path(dir_okay=False, path_type=Path), help="Survival table.")
@click.option("--data-longi", type=click.Path(dir_okay=False, path_type=Path), help="Repeated measurements.")
@click.option("--link", type=click.Choice(["current_level", "current_slope", "shared_random_effects"]))
@click.option("--random", "random_terms", type=click.Choice(["1", "1+timevar"]))
@click.option("--intercept/--no-intercept", default=None)
@click.option("--hazard", type=click.Choice(["Splines", "Splines-per", "Weibull"]))
@click.option("--n-knots", type=int)
@click.option("--kappa", type=float)
@click.option("--auto-kappa/--no-auto-kappa", default=None)
@click.option("--mediation/--no-mediation", default=None)
@click.option("--method-gh", type=click.Choice(["standard", "pseudo_adaptive"]))
@integration_options
@limit_options
@mediation_options
@report_options
@click.pass_context
@handle_errors
def fit_longi(ctx, random_terms, **params):
    """Fit the longitudinal-marker joint model and evaluate surrogacy."""
    started = time.perf_counter()
    params["threads"] = ctx.obj["threads"]
    values = _config_values("fit-longi", params)
    values["model2"] = _given(
        params, ("link", "intercept", "hazard", "n_knots", "kappa", "auto_kappa", "mediation", "method_gh")
    )
    random_terms = random_terms or get_config("random")
    if random_terms is not None:
        values["model2"]["random"] = tuple(random_terms.split("+"))
    run = build_run_config(values)

    ds = load_longitudinal(run.data, run.data_longi, run.scale)
    # reject pte_times before the fit
    if run.model2.mediation:
        mediation_times(run.mediation, ds.survival["time_t"].to_numpy(), ds.survival["status_t"].to_numpy())
    fit = fit_model2(ds, run.model2, run.integration, run.limits)
    report, curves = evaluate_longitudinal(fit, ds, run)
    tables = {}
    if fit.vcov is not None:
        tables["marker_tests.csv"] = marker_summary(ds, fit)
    horizon = float(ds.survival["time_t"].max())
    figures = _figures(run, fit, curves, None, horizon, {"t": "final"})
    sys.exit(_write_run(run, fit, report, curves, tables, started, figures))


@main.command()
@click.option("--model", type=click.Choice(["tte", "longi"]), default="tte", show_default=True)
@click.option("--k-trials", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--n-per-trial", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--censoring-rate", type=float, default=0.0, show_default=True)
@click.option("--admin-censoring", type=float, default=float("inf"))
@click.option("--covariate/--no-covariate", default=False)
@click.option("--link", type=click.Choice(["current_level", "current_slope", "shared_random_effects"]), default="current_level")
@click.option("--schedule-step", type=float, default=0.1, show_default=True)
@click.option("--no-centers", is_flag=True, help="Longitudinal data without center information.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("simulated"))
@handle_errors
def simulate(model, k_trials, n_per_trial, seed, censoring_rate, admin_censoring, covariate, link, schedule_step, no_centers, out_dir):
    """Write a simulated dataset in the same CSV layout the loaders read."""
    params = reference_model1_params() if model == "tte" else reference_model2_params(link, not no_centers)
    sc = Scenario(
        k_trials=k_trials,
        n_per_trial=n_per_trial,
        params=params,
        admin_censoring=admin_censoring,
        censoring_rate=censoring_rate,
        seed=seed,
        covariate=covariate,
        schedule_step=schedule_step,
        with_centers=not no_centers,
    )
    if model == "tte":
        path = write_tte_dataset(simulate_model1(sc), out_dir / "data.csv")
        click.echo(str(path))
    else:
        surv, longi = write_longitudinal(simulate_model2(sc), out_dir / "surv.csv", out_dir / "longi.csv")
        click.echo(f"{surv}\n{longi}")


@main.command()
@click.option("--out-dir", type=click.Path(file_okay=False, exists=True, path_type=Path), default=Path("surroval_out"))
@click.option("--decimals", type=click.IntRange(0, 12), default=4, show_default=True)
@click.option("--plots/--no-plots", default=True)
@handle_errors
def report(out_dir, decimals, plots):
    """Re-render summary.txt (and the mediation figure) from the JSON/CSV of a finished run."""
    fit_path = out_dir / "fit.json"
    if not fit_path.exists():
        raise InputError(f"{fit_path} not found; run fit-tte or fit-longi first")
    fit_json = json.loads(fit_path.read_text())
    surrogacy_path = out_dir / "surrogacy.json"
    surrogacy_json = json.loads(surrogacy_path.read_text()) if surrogacy_path.exists() else None
    curves_path = out_dir / "curves.csv"
    curves = pd.read_csv(curves_path) if curves_path.exists() else None
    (out_dir / "summary.txt").write_text(summary_text(fit_json, surrogacy_json, decimals, curves))
    if plots and curves is not None:
        from .utils.plots import plot_mediation

        plot_mediation(curves, out_dir / "mediation.svg")
    click.echo((out_dir / "summary.txt").read_text())


if __name__ == "__main__":
    main()
