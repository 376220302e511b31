"""Command-line entry points: fly, batch, learn, tune and report.

Exit codes: 0 ok (mission complete or time limit), 1 unexpected error,
2 configuration error, 3 crash, 4 estimate divergence, 5 ill-conditioned
fit, 6 not enough flights for tuning.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from .batch import run_batch, write_batch
from .config import DETECTOR_ALGORITHMS, ConfigError, load_vehicle
from .engine import fly
from .flightlog import load_log, unique_path, write_log
from .learn import FitError, generate_sysid_log, learn_from_logs, write_vehicle_fragment
from .report import report_from_files
from .scenario import MODEL_KINDS, ScenarioConfig, Variant, load_matrix, load_scenario, realworld_vehicle
from .tune import TooFewFlights, TuneError, tune_detectors, write_detector_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ILL_CONDITIONED = 5
EXIT_TOO_FEW_FLIGHTS = 6


def setup_logging(verbosity: int):
    level = logging.WARNING if verbosity <= 0 else (logging.INFO if verbosity == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _overrides(args) -> Optional[Variant]:
    changes = {}
    if getattr(args, "detector", None):
        changes["detector"] = args.detector
    if getattr(args, "model", None):
        changes["model"] = args.model
    if getattr(args, "no_recovery", False):
        changes["recovery"] = False
    if getattr(args, "no_buffer", False):
        changes["buffer"] = False
    return Variant(name="cli", **changes) if changes else None


def apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    variant = _overrides(args)
    return variant.apply(cfg) if variant is not None else cfg


# ---------------------------------------------------------------- commands

def cmd_fly(args) -> int:
    cfg = apply_overrides(load_scenario(args.config, seed=args.seed), args)
    result = fly(cfg, record=True)
    out = Path(args.out)
    stem = f"{Path(args.config).stem}_s{cfg.seed}"
    log_path = write_log(result.log, out, stem)
    row = result.outcome_row()
    outcome_path = unique_path(out / f"{stem}_outcome.csv")
    pd.DataFrame([row]).to_csv(outcome_path, index=False, float_format="%.9g")
    for key in ("attack", "terminal", "t_end", "t_atk", "t_alarm", "tp", "fp", "tn", "fn", "ttd",
                "recovery_duration", "switches"):
        print(f"{key:>18}: {row[key]}")
    print(f"{'log':>18}: {log_path}")
    return result.exit_code


def cmd_batch(args) -> int:
    matrix = load_matrix(args.config)
    base = apply_overrides(matrix.base, args)
    changes = {"base": base}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    matrix = matrix.model_validate({**matrix.__dict__, **changes})
    out = Path(args.out)
    result = run_batch(matrix, jobs=args.jobs, log_dir=out / "logs" if args.logs else None)
    paths = write_batch(result, out, name=matrix.name)
    print(paths["report"].read_text())
    failed = int((result.outcomes["status"] == "failed").sum())
    return EXIT_FAILURE if failed == len(result.outcomes) and failed else EXIT_OK


def cmd_learn(args) -> int:
    if args.vehicle:
        base, battery = load_vehicle(args.vehicle)
    else:
        base, battery = realworld_vehicle(), None
    if args.logs:
        logs = [load_log(p) for p in args.logs]
    else:
        seeds = range(args.seed or 0, (args.seed or 0) + args.generate)
        logs = [generate_sysid_log(base, seed, noise=not args.noiseless, battery=battery) for seed in seeds]
    result = learn_from_logs(logs, base, source=args.source)
    path = write_vehicle_fragment(unique_path(Path(args.out) / "learned_vehicle.ini"), result, battery)
    for name, value in result.values().items():
        print(f"{name:>18}: {value:.6g}")
    print(f"{'written':>18}: {path}")
    if result.ill_conditioned:
        logger.warning("at least one fit is ill-conditioned")
        return EXIT_ILL_CONDITIONED
    return EXIT_OK


def cmd_tune(args) -> int:
    logs = [load_log(p) for p in args.logs]
    result = tune_detectors(logs, algorithm=args.detector or "cs-ema", states=args.states)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = unique_path(out / "threshold_curves.csv")
    result.curve_frame().to_csv(curve_path, index=False, float_format="%.9g")
    table_path = write_detector_table(unique_path(out / "tuned_detectors.ini"), result.table,
                                      header=f"tuned on {len(logs)} attack-free flights")
    for state, tuning in result.states.items():
        print(f"{state:>14}: {tuning.params.model_dump(exclude={'noise_std'})}")
    print(f"{'curves':>14}: {curve_path}")
    print(f"{'written':>14}: {table_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    text = report_from_files(args.outcomes, title=args.title)
    if args.out:
        path = unique_path(Path(args.out))
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _defense_flags(p: argparse.ArgumentParser):
    p.add_argument("--no-recovery", action="store_true", help="detect only, never switch sources")
    p.add_argument("--no-buffer", action="store_true", help="fuse measurements without the FIFO delay")
    p.add_argument("--detector", choices=DETECTOR_ALGORITHMS)
    p.add_argument("--model", choices=MODEL_KINDS, help="defense-side model fidelity")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadsec", description="Quadcopter sensor-attack testbed")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fly", help="fly one scenario and write its log")
    p.add_argument("--config", required=True, help="scenario INI file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs")
    _defense_flags(p)
    p.set_defaults(func=cmd_fly)

    p = sub.add_parser("batch", help="fly a mission x attack x variant matrix")
    p.add_argument("--config", required=True, help="matrix INI file")
    p.add_argument("--seed", type=int, help="first seed of the batch")
    p.add_argument("--seeds", type=int, help="flights per case")
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--logs", action="store_true", help="also write every flight log")
    _defense_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("learn", help="fit drag, rotor lag and rotor gyro coefficients")
    p.add_argument("logs", nargs="*", help="flight-log CSVs; none flies fresh excitation flights")
    p.add_argument("--vehicle", help="vehicle INI with the bench-measured values")
    p.add_argument("--source", choices=("true", "measured"), default="measured")
    p.add_argument("--generate", type=int, default=1, help="excitation flights to fly without logs")
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("tune", help="select detector parameters from attack-free logs")
    p.add_argument("logs", nargs="+", help="attack-free flight-log CSVs")
    p.add_argument("--detector", choices=DETECTOR_ALGORITHMS)
    p.add_argument("--states", nargs="*", help="measured states to tune (default: all)")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="summarize outcome CSVs")
    p.add_argument("outcomes", nargs="+")
    p.add_argument("--title", default="report")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TooFewFlights as exc:
        print(f"tune: {exc}", file=sys.stderr)
        return EXIT_TOO_FEW_FLIGHTS
    except (TuneError, FitError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
