"""Command line entry point: ``saa-control {reference,experiment,rates,bounds,check}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment as ex
from .checks import run_checks
from .prox_solver import SolverConfig

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig fields")
    common.add_argument("--preset", choices=sorted(ex.PRESETS), default="desk")
    common.add_argument("--output-dir")
    common.add_argument("--seed", type=int, help="base seed of the replication streams")
    common.add_argument("--mode", choices=ex.MODES)
    common.add_argument("--drop-last", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="saa-control", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reference", parents=[common], help="solve and store the reference control")
    sub.add_parser("experiment", parents=[common], help="run an error sweep against the reference")
    p = sub.add_parser("rates", parents=[common], help="mean/Luxemburg statistics and rate fits")
    p.add_argument("csv", help="error table written by 'experiment'")
    p = sub.add_parser("bounds", parents=[common], help="evaluate the theoretical error bounds")
    p.add_argument("--constant", action="append", default=[], metavar="NAME=VALUE",
                   help="override a bound constant, e.g. C_U=2.0")
    p.add_argument("--delta", action="append", type=float, help="confidence level(s) in (0, 1)")
    p = sub.add_parser("check", parents=[common], help="run the fast invariant suite")
    p.add_argument("--tol", type=float, help="solver tolerance for the solver check")
    return parser


def load_config(args) -> ex.ExperimentConfig:
    data = dict(ex.PRESETS[args.preset])
    if args.config:
        with open(args.config) as fh:
            data |= json.load(fh)
    for flag, key in (("output_dir", "output_dir"), ("seed", "base_seed"),
                      ("mode", "mode"), ("drop_last", "drop_last")):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if getattr(args, "delta", None):
        data["deltas"] = args.delta
    return ex.ExperimentConfig.from_dict(data)


def _parse_constants(items) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise ex.ConfigError(f"constant override must be NAME=VALUE, got {item!r}")
        out[name.strip()] = float(value)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        if args.command == "reference":
            _, report = ex.cmd_reference(config)
            print(report.to_json())
        elif args.command == "experiment":
            records = ex.cmd_experiment(config)
            print(f"wrote {len(records)} records to {ex.experiment_csv(config)}")
        elif args.command == "rates":
            table = ex.cmd_rates(args.csv, config.drop_last, args.output_dir)
            print(json.dumps({k: v for k, v in table.items() if k != "groups"}, indent=2))
        elif args.command == "bounds":
            report = ex.cmd_bounds(config, _parse_constants(args.constant))
            print(json.dumps({"c2": report["c2"], "c1_per_h": report["c1_per_h"]}, indent=2))
        elif args.command == "check":
            solver = SolverConfig(tol=args.tol) if args.tol else None
            return EXIT_OK if run_checks(solver) else EXIT_SOLVER
    except ex.SolverFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ex.ConfigError, TypeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed inputs (CSV rows, field files) surface here with their location
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if args.command == "rates" else EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
