# cli.py
#
# Instrumental-variable weighting for marginal structural mean models
# Copyright (C) 2026 IvMsmm Team
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

import argparse
import os
import sys
from dataclasses import fields, replace

import pandas as pd

from ivmsmm.backend import constants
from ivmsmm.backend.analysis import diagnostics
from ivmsmm.backend.analysis.markov_analysis import SWEEP_PARAMETERS, GrowthModel, growth_sweep
from ivmsmm.backend.estimation.estimators import EstimatorConfig, EstimatorKind, build_weights
from ivmsmm.backend.estimation.experiment import coverage_experiment, default_config
from ivmsmm.backend.estimation.inference import analyze
from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.globals import default_bootstrap_replicates, default_jobs, experiment_output_path
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.panel import CSV_FLOAT_FORMAT, read_panel_csv, write_panel_csv
from ivmsmm.backend.simulation.common import read_truth, write_truth
from ivmsmm.backend.simulation.registry import DGPS, make_dgp
from ivmsmm.frontend.cli.config import ConfigError, Settings
from ivmsmm.frontend.cli.reports import render_diagnostics, render_estimate, render_experiment

logging = Logger("cli")

DGP_PARAMETERS = sorted({item.name for dgp in DGPS.values() for item in fields(dgp.params_class)} - {"T"})
GLOBAL_OPTIONS = ("command", "config", "verbose", "quiet", "jobs", "grid")
DEFAULT_KINDS = "associational,sra,iv"


def _add_dgp_options(parser):
    group = parser.add_argument_group("data-generating process parameters")
    for name in DGP_PARAMETERS:
        group.add_argument(f"--{name}", metavar="VALUE", help="comma-separated for per-period loadings"
                           if name in ("tau", "rho") else None)

def _flag():
    return {"action": "store_const", "const": "true", "default": None}

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivmsmm",
        description="Instrumental-variable weighting for marginal structural mean models",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {constants.version}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log nothing")
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker processes for replications (default: $IVMSMM_JOBS or 1)")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="draw a panel from a data-generating process")
    simulate.add_argument("--config", help="flat key = value settings file")
    simulate.add_argument("--dgp", help=f"one of: {', '.join(DGPS)}")
    simulate.add_argument("--n", help="number of subjects")
    simulate.add_argument("--t", dest="T", help="number of periods")
    simulate.add_argument("--seed")
    simulate.add_argument("--replication", help="replication index of the random stream")
    simulate.add_argument("--out", help="panel CSV path")
    simulate.add_argument("--truth", help="truth file path (default: panel path with .truth)")
    simulate.add_argument("--hide-latent", dest="hide_latent", help="omit the u columns", **_flag())
    _add_dgp_options(simulate)

    estimate = commands.add_parser("estimate", help="fit an MSMM to a panel CSV")
    estimate.add_argument("panel", help="panel CSV path")
    estimate.add_argument("--config")
    estimate.add_argument("--kind", help=f"one of: {', '.join(k.value for k in EstimatorKind)}")
    estimate.add_argument("--truth", help="truth file of the generating process")
    estimate.add_argument("--treatment-model", dest="treatment_model", help="probit, markov or known")
    estimate.add_argument("--iv-model", dest="iv_model", help="known or logistic")
    estimate.add_argument("--instrument-probability", dest="instrument_probability")
    estimate.add_argument("--q", help="known latent share of the Markov treatment model")
    estimate.add_argument("--per-time", dest="per_time", help="period-specific nuisance coefficients", **_flag())
    estimate.add_argument("--bootstrap", nargs="?", const=str(default_bootstrap_replicates),
                          help=f"bootstrap replicates (default when given without a count: {default_bootstrap_replicates})")
    estimate.add_argument("--level", help="confidence level")
    estimate.add_argument("--seed")
    estimate.add_argument("--out", help="report CSV path")
    estimate.add_argument("--weights-out", dest="weights_out", help="write the weights as CSV")

    experiment = commands.add_parser("experiment", help="run a Monte Carlo coverage experiment")
    experiment.add_argument("--config")
    experiment.add_argument("--name")
    experiment.add_argument("--dgp")
    experiment.add_argument("--kinds", help=f"comma-separated estimators (default: {DEFAULT_KINDS})")
    experiment.add_argument("--n", help="comma-separated sample sizes")
    experiment.add_argument("--t", dest="T", help="comma-separated period counts")
    experiment.add_argument("--replications")
    experiment.add_argument("--bootstrap")
    experiment.add_argument("--level")
    experiment.add_argument("--seed")
    experiment.add_argument("--out", help="coverage CSV path")
    _add_dgp_options(experiment)

    analyze_weights = commands.add_parser("analyze-weights", help="weight second-moment growth on Markov chains")
    analyze_weights.add_argument("--config")
    analyze_weights.add_argument("--model", help=f"one of: {', '.join(m.value for m in GrowthModel)}")
    analyze_weights.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2,...",
                                 help="values of one sweep parameter")
    analyze_weights.add_argument("--t", dest="T", help="comma-separated period counts")
    analyze_weights.add_argument("--mc-n", dest="mc_n", help="Monte Carlo draws per row, 0 disables")
    analyze_weights.add_argument("--seed")
    analyze_weights.add_argument("--out", help="growth CSV path")

    diagnose = commands.add_parser("diagnose", help="check identification conditions")
    diagnose.add_argument("model_file", nargs="?", help="JSON model file")
    diagnose.add_argument("--config")
    diagnose.add_argument("--builtin", help=f"check a built-in process, one of: {', '.join(DGPS)}")
    diagnose.add_argument("--t", dest="T")
    diagnose.add_argument("--identity-n", dest="identity_n", help="Monte Carlo draws of the weighting identity check")
    diagnose.add_argument("--seed")
    diagnose.add_argument("--out", help="CSV of check results")
    _add_dgp_options(diagnose)

    return parser


def _flags(args) -> dict:
    flags = {key: value for key, value in vars(args).items() if key not in GLOBAL_OPTIONS}
    for entry in getattr(args, "grid", []):
        name, separator, values = entry.partition("=")
        if not separator or not name:
            raise ConfigError(f"--grid expects NAME=V1,V2,..., got {entry!r}")
        flags[name.strip()] = values
    return flags

def _dgp_values(settings: Settings) -> dict:
    return settings.subset(DGP_PARAMETERS + ["T"])

def _write_frame(frame: pd.DataFrame, path: str):
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        logging.error(f"Failed to write table to location: {path}.", exc=e)
        raise

def _kind(value: str) -> EstimatorKind:
    try:
        return EstimatorKind(value.strip())
    except ValueError:
        raise ConfigError(
            f"unknown estimator {value!r}, expected one of: {', '.join(k.value for k in EstimatorKind)}"
        ) from None

def _sidecar(path: str) -> str:
    return f"{os.path.splitext(path)[0]}.truth"


# Commands

def cmd_simulate(args, settings: Settings, jobs: int) -> int:
    dgp = make_dgp(settings.get_str("dgp", "linear"), _dgp_values(settings))
    n = settings.get_int("n")
    seed = settings.get_int("seed", 0)
    out = settings.get_str("out")

    output = dgp.simulate(n, seed, settings.get_int("replication", 0))
    panel = output.panel.drop_latent() if settings.get_bool("hide_latent", False) else output.panel

    write_panel_csv(panel, out)
    write_truth(output, settings.get_str("truth", _sidecar(out)), n, seed)
    logging.info(f"Simulated {n} subjects over {dgp.T} periods from the {dgp.name} process into {out}")
    return 0

def cmd_estimate(args, settings: Settings, jobs: int) -> int:
    path = args.panel
    panel = read_panel_csv(path)
    kind = _kind(settings.get_str("kind", "iv"))

    truth = settings.get_str("truth", _sidecar(path))
    dgp = None
    if os.path.isfile(truth):
        dgp = read_truth(truth)
        logging.debug(f"Using truth file {truth} ({dgp.name})")
    elif "truth" in settings:
        raise ConfigError(f"truth file {truth} does not exist")

    config = default_config(kind, dgp) if dgp is not None else EstimatorConfig(kind=kind)
    overrides = {}
    for key in ("treatment_model", "iv_model"):
        if key in settings:
            overrides[key] = settings.get_str(key)
    if "instrument_probability" in settings:
        overrides["instrument_probability"] = settings.get_float("instrument_probability")
    if "q" in settings:
        overrides["q_known"] = settings.get_float("q")
    if "per_time" in settings:
        overrides["per_time"] = settings.get_bool("per_time")
    config = replace(config, **overrides)

    seed = settings.get_int("seed", 0)
    report = analyze(
        panel, config,
        B=settings.get_int("bootstrap", 0),
        seed=seed,
        level=settings.get_float("level", 0.95),
        jobs=jobs,
    )
    print(render_estimate(report), end="")

    if "out" in settings:
        report.write_csv(settings.get_str("out"))
    if "weights_out" in settings:
        build_weights(panel, config).write_csv(settings.get_str("weights_out"), panel.subjects)
    return 0

def cmd_experiment(args, settings: Settings, jobs: int) -> int:
    name = settings.get_str("name", "experiment")
    dgp_name = settings.get_str("dgp", "linear")
    kinds = [_kind(k) for k in settings.get_str("kinds", DEFAULT_KINDS).split(",") if k.strip()]
    values = _dgp_values(settings)
    values.pop("T", None)

    frame = coverage_experiment(
        dgp_name, kinds,
        n_grid=settings.get_int_list("n"),
        T_grid=settings.get_int_list("T", [make_dgp(dgp_name, values).T]),
        R=settings.get_int("replications", 200),
        level=settings.get_float("level", 0.95),
        seed=settings.get_int("seed", 0),
        B=settings.get_int("bootstrap", 0),
        jobs=jobs,
        params=values,
    )

    out = settings.get_str("out", experiment_output_path(name))
    _write_frame(frame, out)
    print(render_experiment(frame), end="")
    logging.info(f"Experiment {name} written to {out}")
    return 0

def cmd_analyze_weights(args, settings: Settings, jobs: int) -> int:
    value = settings.get_str("model")
    try:
        model = GrowthModel(value)
    except ValueError:
        raise ConfigError(
            f"unknown model {value!r}, expected one of: {', '.join(m.value for m in GrowthModel)}"
        ) from None

    grid = {name: settings.get_float_list(name) for name in SWEEP_PARAMETERS[model] if name in settings}
    seed = settings.get_int("seed", 0)
    frame = growth_sweep(model, grid, settings.get_int_list("T", [7]), settings.get_int("mc_n", 0), seed)

    out = settings.get_str("out", experiment_output_path(f"growth {model.value}"))
    _write_frame(frame, out)
    logging.info(f"{len(frame)} {model.value} rows written to {out}")
    return 0

def _check_entry(title: str, report) -> dict:
    if isinstance(report, diagnostics.IctReport):
        lines = [f"max deviation of the compliance difference across u: {report.max_deviation:.3g}"]
        if report.iv_irrelevant:
            lines.append("instrument is irrelevant: the compliance difference is zero everywhere")
        if not report.passed and report.worst_cell:
            lines.append(f"worst cell: {report.worst_cell}")
    elif isinstance(report, diagnostics.PointExposureReport):
        lines = [f"max deviation: {report.max_deviation:.3g}"]
        if not report.u_varying:
            lines.append("treatment probabilities do not vary with u; proportionality not required")
        lines.extend(report.failures)
    else:
        lines = [f"lhs {report.lhs:.5g} ± {report.lhs_se:.3g}, rhs {report.rhs:.5g} ± {report.rhs_se:.3g}, "
                 f"z = {report.z:.3g}"]
    return {"title": title, "passed": bool(report.passed), "lines": lines, "row": report.to_row()}

def cmd_diagnose(args, settings: Settings, jobs: int) -> int:
    seed = settings.get_int("seed", 0)
    checks = []

    if args.model_file:
        model = diagnostics.load_model_file(args.model_file)
        for report in diagnostics.run_model(model):
            checks.append(_check_entry(f"{model['check']} ({args.model_file})", report))
    elif "builtin" in settings:
        dgp = make_dgp(settings.get_str("builtin"), _dgp_values(settings))
        if dgp.name == "markov":
            checks.append(_check_entry("independent compliance type", diagnostics.check_ict(diagnostics.markov_ict_table(dgp))))
            omega, p_a = diagnostics.markov_point_exposure_tables(dgp)
            checks.append(_check_entry("point-exposure converse", diagnostics.check_point_exposure_converse(omega, p_a)))
        elif dgp.name == "linear":
            checks.append(_check_entry("independent compliance type", diagnostics.check_ict(diagnostics.linear_ict_table(dgp))))

        n = settings.get_int("identity_n", 0)
        if n > 0:
            for report in diagnostics.run_identity_battery(dgp, n, seed):
                checks.append(_check_entry(f"weighting identity, g = {report.function}", report))
    else:
        raise ConfigError("diagnose needs a model file or --builtin")

    print(render_diagnostics(checks, seed), end="")
    if "out" in settings:
        rows = [dict(check["row"], seed=seed) for check in checks]
        _write_frame(pd.DataFrame(rows), settings.get_str("out"))

    return 0 if all(check["passed"] for check in checks) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "analyze-weights": cmd_analyze_weights,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        logging.set_verbose()
    if args.quiet:
        logging.set_silent()

    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        parser.error("--jobs must be at least 1")

    try:
        settings = Settings.load(args.config, _flags(args))
        return COMMANDS[args.command](args, settings, jobs)
    except (IvMsmmError, OSError) as e:
        logging.error(f"Command {args.command} failed.", exc=e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
