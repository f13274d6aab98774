"""Run bundled presets and print one verdict line per preset.

    python3 scripts/run_presets.py                 # all presets
    python3 scripts/run_presets.py thm12-pareto    # selected presets
"""
from __future__ import annotations

import argparse
import sys
import time

from ruinwalk.experiment import get_preset, list_presets, run_experiment


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", help="preset names (default: all)")
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args(argv)
    specs = [get_preset(n) for n in args.names] if args.names else list_presets()
    bad = 0
    for spec in specs:
        t0 = time.perf_counter()
        rep = run_experiment(spec, args.out, seed=args.seed, workers=args.workers)
        bad += not rep.as_expected
        print(f"{spec.name:22s} verdict={rep.verdict:4s} expected={rep.expected:4s} "
              f"{'ok' if rep.as_expected else 'UNEXPECTED':10s} {time.perf_counter() - t0:6.1f}s", flush=True)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
