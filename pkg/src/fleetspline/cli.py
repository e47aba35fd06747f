"""Command-line interface: simulate, fit, forecast, evaluate, and diagnose.

Every run resolves its options with flag > config-file > default precedence,
echoes the fully resolved configuration (seed included) into the output
directory, and writes only plain CSV/JSON files.  Re-running a command with
the same inputs and seed reproduces the outputs byte for byte.

Exit codes: 0 success, 1 validation or usage error, 2 convergence warnings
escalated by --strict-diagnostics.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import datagen, evaluate, forecast, workflow

RUN_ROOT_ENV = "FLEETSPLINE_RUN_ROOT"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_STRICT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _run_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(RUN_ROOT_ENV, "runs")
    return Path(root) / command


def _resolve(args, defaults: dict) -> dict:
    """flag > config file > defaults; every key ends up explicit."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_conf = json.load(fh)
        unknown = set(file_conf) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_conf)
    for key in defaults:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
    return resolved


def _echo_config(run_dir: Path, command: str, resolved: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **resolved}
    with open(run_dir / "config.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chains", type=int, dest="n_chains")
    p.add_argument("--warmup", type=int, dest="n_warmup")
    p.add_argument("--samples", type=int, dest="n_samples")
    p.add_argument("--target-accept", type=float, dest="target_accept")
    p.add_argument("--max-leapfrog", type=int, dest="max_leapfrog_steps")
    p.add_argument("--knots", type=int, dest="n_interior",
                   help="number of interior knots")
    p.add_argument("--degree", type=int, dest="degree")
    p.add_argument("--centered", action="store_const", const=True,
                   dest="centered",
                   help="sample the centered parameterization")
    p.add_argument("--seed", type=int, dest="seed")


_FIT_DEFAULTS = {
    "n_interior": 6, "degree": 3, "centered": False,
    "n_chains": 4, "n_warmup": 1000, "n_samples": 1000,
    "target_accept": 0.8, "max_leapfrog_steps": 64, "seed": 0,
    "prefit_warmup": 500, "prefit_samples": 500, "prefit_max_leapfrog": 128,
}


def _fit_config(resolved: dict) -> workflow.FitConfig:
    return workflow.FitConfig.from_dict(resolved)


# ----------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    defaults = {
        "seed": 0, "lifecycle": 31, "ships_per_type": "6,27,43,19,4",
        "ship_sd": 0.15, "noise_sd": 0.1, "warranty_censor_age": 5,
        "p_censor": 0.7, "window_min": 4, "window_max": 16,
    }
    resolved = _resolve(args, defaults)
    run_dir = _run_dir(args, "simulate")
    _echo_config(run_dir, "simulate", resolved)

    ships = tuple(int(v) for v in str(resolved["ships_per_type"]).split(","))
    base = datagen.default_scenario()
    scenario = datagen.FleetScenario(
        ships_per_type=ships,
        lifecycle=resolved["lifecycle"],
        ship_sd=resolved["ship_sd"],
        noise_sd=resolved["noise_sd"],
        warranty_censor_age=resolved["warranty_censor_age"],
        p_censor=resolved["p_censor"],
        window_lengths=(resolved["window_min"], resolved["window_max"]),
        type_age_bands=(base.type_age_bands
                        if ships == base.ships_per_type else ()),
    )
    data, truth = datagen.generate(scenario, resolved["seed"])
    workflow.write_fleet_csv(data, run_dir / "fleet.csv")
    with open(run_dir / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {data.n_obs} observations for {data.n_ships} ships "
          f"to {run_dir / 'fleet.csv'}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    resolved = _resolve(args, _FIT_DEFAULTS)
    run_dir = _run_dir(args, "fit")
    _echo_config(run_dir, "fit", resolved)

    data = workflow.load_fleet_csv(args.data)
    artifact = workflow.fit(data, _fit_config(resolved))
    workflow.save_artifact(artifact, run_dir)
    print(artifact.diagnostics.report())
    if not artifact.converged or artifact.warnings:
        for w in artifact.warnings:
            print(f"warning: {w}", file=sys.stderr)
        if args.strict_diagnostics:
            return EXIT_STRICT
    return EXIT_OK


def _cmd_forecast(args) -> int:
    defaults = {"level": 0.9, "scale": "transformed", "seed": None,
                "hierarchical": False, "include_noise": False}
    resolved = _resolve(args, defaults)
    run_dir = _run_dir(args, "forecast")
    artifact = workflow.load_artifact(args.artifact)

    mode = args.mode
    kwargs = {"level": resolved["level"], "scale": resolved["scale"],
              "seed": resolved["seed"]}
    if mode == "ship":
        if args.ship is None:
            raise ValueError("--ship is required for mode 'ship'")
        curve = forecast.curve_for_ship(
            artifact, args.ship, include_noise=resolved["include_noise"],
            **kwargs)
        stem = f"curve_ship_{args.ship}"
    elif mode == "new-ship":
        if args.type is None:
            raise ValueError("--type is required for mode 'new-ship'")
        curve = forecast.curve_for_new_ship(
            artifact, args.type, hierarchical=resolved["hierarchical"],
            **kwargs)
        stem = f"curve_new_ship_{args.type}"
    elif mode == "new-type":
        curve = forecast.curve_for_new_type(artifact, **kwargs)
        stem = "curve_new_type"
    elif mode == "qualitative":
        if args.donor is None:
            raise ValueError("--donor is required for mode 'qualitative'")
        curve = forecast.curve_with_qualitative_prior(artifact, args.donor,
                                                      **kwargs)
        stem = f"curve_qualitative_{args.donor}"
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown mode {mode!r}")

    resolved["mode"] = mode
    _echo_config(run_dir, "forecast", resolved)
    csv_path, _ = forecast.write_curve(curve, run_dir / stem)
    print(f"wrote {csv_path}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    defaults = dict(_FIT_DEFAULTS, holdout_frac=0.3)
    resolved = _resolve(args, defaults)
    run_dir = _run_dir(args, "evaluate")
    _echo_config(run_dir, "evaluate", resolved)

    data = workflow.load_fleet_csv(args.data)
    report = evaluate.holdout_cv(data, _fit_config(resolved),
                                 holdout_frac=resolved["holdout_frac"],
                                 seed=resolved["seed"])
    evaluate.write_report_csv(report, run_dir / "report.csv")
    table = evaluate.format_report_table(report, data)
    (run_dir / "report.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def _cmd_cv(args) -> int:
    resolved = _resolve(args, _FIT_DEFAULTS)
    run_dir = _run_dir(args, "cv")
    _echo_config(run_dir, "cv", resolved)

    data = workflow.load_fleet_csv(args.data)
    report = evaluate.loo_ship_cv(data, _fit_config(resolved))
    evaluate.write_report_csv(report, run_dir / "report.csv")
    table = evaluate.format_report_table(report, data)
    (run_dir / "report.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def _cmd_distances(args) -> int:
    run_dir = _run_dir(args, "distances")
    _echo_config(run_dir, "distances", {"artifact": str(args.artifact)})
    artifact = workflow.load_artifact(args.artifact)
    rows = forecast.type_distance_table(artifact)
    path = forecast.write_distance_table(rows, run_dir / "distances.csv")
    for (a, b), dist in rows:
        print(f"{a} vs {b}\t{dist:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    artifact = workflow.load_artifact(args.artifact)
    report = artifact.diagnostics.report()
    print(report)
    if args.out:
        run_dir = _run_dir(args, "diagnose")
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "diagnostics.txt").write_text(report + "\n")
    if args.strict_diagnostics and not artifact.converged:
        return EXIT_STRICT
    return EXIT_OK


def _cmd_sweep_knots(args) -> int:
    defaults = dict(_FIT_DEFAULTS, holdout_frac=0.3, k="4,6,8,10")
    resolved = _resolve(args, defaults)
    run_dir = _run_dir(args, "sweep-knots")
    _echo_config(run_dir, "sweep-knots", resolved)

    data = workflow.load_fleet_csv(args.data)
    candidates = [int(v) for v in str(resolved["k"]).split(",")]
    rows, best = evaluate.knot_sweep(data, candidates, _fit_config(resolved),
                                     holdout_frac=resolved["holdout_frac"],
                                     seed=resolved["seed"])
    with open(run_dir / "sweep.csv", "w") as fh:
        fh.write("n_basis,cv_rmse\n")
        for k, val in rows:
            fh.write(f"{k},{format(val, '.17g')}\n")
    for k, val in rows:
        marker = " <- selected" if k == best else ""
        print(f"K={k}: {val:.4f}{marker}")
    return EXIT_OK


def emit_plot_data(obj, path) -> Path:
    """Write a curve, eval report, or distance table as tidy CSV."""
    if isinstance(obj, forecast.ForecastCurve):
        csv_path, _ = forecast.write_curve(obj, Path(path))
        return csv_path
    if isinstance(obj, evaluate.EvalReport):
        return evaluate.write_report_csv(obj, path)
    if isinstance(obj, list) and obj and isinstance(obj[0][0], tuple):
        return forecast.write_distance_table(obj, path)
    raise TypeError(f"no plot emission for {type(obj).__name__}")


# ----------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="fleetspline",
                     description="hierarchical B-spline failure-rate "
                                 "forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic fleet panel")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--lifecycle", type=int)
    p.add_argument("--ships-per-type", dest="ships_per_type")
    p.add_argument("--ship-sd", type=float, dest="ship_sd")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--censor-age", type=int, dest="warranty_censor_age")
    p.add_argument("--p-censor", type=float, dest="p_censor")
    p.add_argument("--window-min", type=int, dest="window_min")
    p.add_argument("--window-max", type=int, dest="window_max")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the hierarchical model to a panel")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--strict-diagnostics", action="store_true")
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("forecast", help="emit a forecast curve from a fit")
    p.add_argument("--artifact", required=True)
    p.add_argument("--mode", required=True,
                   choices=["ship", "new-ship", "new-type", "qualitative"])
    p.add_argument("--ship")
    p.add_argument("--type")
    p.add_argument("--donor")
    p.add_argument("--level", type=float)
    p.add_argument("--scale", choices=["transformed", "original"])
    p.add_argument("--hierarchical", action="store_const", const=True)
    p.add_argument("--include-noise", action="store_const", const=True,
                   dest="include_noise")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("evaluate",
                       help="holdout CV against the pooling baselines")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--holdout-frac", type=float, dest="holdout_frac")
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("cv", help="leave-one-ship-out cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("distances",
                       help="pairwise type-curve distance table")
    p.add_argument("--artifact", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_distances)

    p = sub.add_parser("diagnose", help="print stored fit diagnostics")
    p.add_argument("--artifact", required=True)
    p.add_argument("--out")
    p.add_argument("--strict-diagnostics", action="store_true")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("sweep-knots", help="CV sweep over basis sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--k")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--holdout-frac", type=float, dest="holdout_frac")
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_sweep_knots)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
