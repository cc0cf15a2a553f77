"""Command-line entry point.

Exit status: 0 when every verdict passes, 1 when a verdict fails, 2 on usage
or configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .scenario import PARTS, run_scenario

COMMANDS = {
    "simulate": ("simulate",),
    "sgd-run": ("sgd",),
    "analyze-aoi": ("aoi",),
    "analyze-mixing": ("mixing",),
    "certify-ssc": ("ssc",),
    "report": PARTS,
}
EXIT_OK, EXIT_VERDICT, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoi-lab", description="AoI and distributed SGD experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="scenario YAML file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", type=Path, help="output directory (default: out/<scenario>)")
        p.add_argument("--replications", type=int, help="override the configured replication count")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, {"seed": args.seed, "replications": args.replications})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "certify-ssc" and cfg.analysis.ssc is None:
        print(f"config error: {args.config}: field 'analysis.ssc': required for certify-ssc", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or Path("out") / cfg.scenario
    try:
        bundle = run_scenario(cfg, out, COMMANDS[args.command])
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "certify-ssc":
        for edge, prob in bundle.metadata["ssc"]["window_probability"].items():
            print(f"window probability {edge}: {prob:.6g}")
    for v in bundle.verdicts:
        value = f"{v.value:.6g}" if isinstance(v.value, float) else v.value
        print(f"{'PASS' if v.passed else 'FAIL'} {v.name} = {value} ({v.detail})")
    print(f"outputs written to {out}")
    return EXIT_OK if bundle.passed else EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
