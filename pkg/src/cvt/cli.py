"""Command line entry points.

    cvt run --config exp.json [--method cvt] [--seeds 0,1,2] \
            [--protocol task_free|task_aware|both] [--out DIR]
    cvt report --in DIR [--out DIR]

Exit codes: 0 ok, 2 configuration error, 3 training aborted (partial results
are left on disk).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigurationError, NonFiniteLossError
from .experiment import ExperimentConfig, emit_report, run_experiment


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(path.read_text())
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc


def build_config(args) -> ExperimentConfig:
    raw = load_config_file(args.config) if args.config else {}
    if args.method:
        raw["method"] = args.method
    if args.seeds:
        raw["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.protocol and args.protocol != "both":
        raw["protocols"] = [args.protocol]
    if args.out:
        raw["output_dir"] = args.out
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigurationError(f"bad config field: {exc}") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cvt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one method over its seeds")
    run_p.add_argument("--config", help="JSON or TOML experiment config")
    run_p.add_argument("--method", help="method name override")
    run_p.add_argument("--seeds", help="comma-separated seed list override")
    run_p.add_argument("--protocol", choices=["task_free", "task_aware", "both"],
                       default="both")
    run_p.add_argument("--out", help="output directory override")

    rep_p = sub.add_parser("report", help="aggregate results into plots and a table")
    rep_p.add_argument("--in", dest="results_dir", required=True)
    rep_p.add_argument("--out", dest="out_dir", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            summary = run_experiment(build_config(args))
            for protocol, stats in summary["protocols"].items():
                acc = stats["overall_accuracy"]
                print(f"{summary['method']} {protocol}: "
                      f"A_T = {acc['mean']:.2f} ± {acc['std']:.2f}")
            return 0
        if args.command == "report":
            paths = emit_report(args.results_dir, args.out_dir)
            print(f"wrote {paths['report']}")
            return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
