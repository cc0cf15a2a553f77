"""Run every shipped scenario and summarize the verdicts.

Usage: python scripts/run_scenarios.py [--out DIR] [names...]
"""
from __future__ import annotations

import argparse
import time
from pathlib import Path

from aoi_lab.harness import load_config, run_scenario

ROOT = Path(__file__).resolve().parents[1]
# scenarios whose verdicts are expected to fail
NEGATIVE = {"crit7_negative_control"}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=ROOT / "out")
    parser.add_argument("names", nargs="*", help="scenario file stems (default: all)")
    args = parser.parse_args()
    paths = sorted((ROOT / "scenarios").glob("*.yaml"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    bad = 0
    for path in paths:
        start = time.perf_counter()
        bundle = run_scenario(load_config(path), args.out / path.stem)
        expected = not bundle.passed if path.stem in NEGATIVE else bundle.passed
        bad += not expected
        status = "as expected" if expected else "UNEXPECTED"
        print(f"{path.stem:32s} passed={bundle.passed!s:5s} {status}  ({time.perf_counter() - start:.1f} s)")
        for v in bundle.verdicts:
            print(f"    {'PASS' if v.passed else 'FAIL'} {v.name}")
    return 1 if bad else 0


if __name__ == "__main__":
    raise SystemExit(main())
