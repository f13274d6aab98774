"""Command-line entry point.

``ruinwalk run <spec.json|preset>``   run an experiment, write its artifacts
``ruinwalk presets [--json NAME]``    list bundled experiments or dump one as JSON
``ruinwalk tails <dist.json> --x ..`` tail, integrated tail and scale of a distribution
``ruinwalk bound --alpha A --beta B`` growth-bound feasibility for phi(x) = ceil(x^beta)

Exit codes: 0 all verdicts as expected, 1 unexpected verdict, 2 usage or
validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dists, limits
from .experiment import ExperimentSpec, SpecError, get_preset, list_presets, run_experiment
from .models import CeilPower

__all__ = ["main", "build_parser", "load_spec"]

EXIT_OK, EXIT_UNEXPECTED, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_spec(ref: str, overrides=()) -> ExperimentSpec:
    """Spec from a JSON file path or a preset name, with ``key=value`` overrides."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            spec = ExperimentSpec.from_json(path.read_text())
        except OSError as exc:
            raise SpecError([f"spec file: {exc}"]) from exc
        except json.JSONDecodeError as exc:
            raise SpecError([f"spec file: invalid JSON ({exc})"]) from exc
    else:
        try:
            spec = get_preset(ref)
        except KeyError as exc:
            raise SpecError([f"unknown preset or missing file: {ref}"]) from exc
    pairs = {}
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise SpecError([f"override {item!r}: expected key=value"])
        pairs[key] = _parse_value(val)
    if pairs:
        spec = spec.with_overrides(pairs)
    spec.validate()
    return spec


def _cmd_run(args) -> int:
    spec = load_spec(args.spec, args.set)
    rep = run_experiment(spec, out_dir=args.out, seed=args.seed, workers=args.workers)
    print(f"{rep.name}: verdict={rep.verdict} expected={rep.expected} "
          f"{'as expected' if rep.as_expected else 'UNEXPECTED'}")
    for k, v in rep.criteria.items():
        print(f"  {k}: {v}")
    if rep.files:
        print(f"  summary: {rep.files.get('summary')}")
    return EXIT_OK if rep.as_expected else EXIT_UNEXPECTED


def _cmd_presets(args) -> int:
    if args.json:
        print(get_preset(args.json).to_json())
        return EXIT_OK
    for p in list_presets():
        print(f"{p.name:22s} {p.check:13s} expect={p.expect:4s} {p.budget or '':12s} {p.description}")
    return EXIT_OK


def _cmd_tails(args) -> int:
    try:
        model = dists.dist_from_dict(json.loads(Path(args.dist).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SpecError([f"distribution: {exc}"]) from exc
    x = np.asarray(args.x, dtype=float)
    scale = dists.scale_function(model)
    rows = {"x": x.tolist(), "tail": np.atleast_1d(model.tail(x)).tolist(),
            "integrated_tail": np.atleast_1d(model.tail_integral(x)).tolist(),
            "scale": np.atleast_1d(scale(x)).tolist()}
    if args.as_json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    print(f"{'x':>12s} {'tail':>14s} {'integrated':>14s} {'scale':>14s}")
    for i in range(len(x)):
        print(f"{x[i]:12.6g} {rows['tail'][i]:14.6e} {rows['integrated_tail'][i]:14.6e} {rows['scale'][i]:14.6g}")
    return EXIT_OK


def _cmd_bound(args) -> int:
    if not args.alpha > 1 or not args.beta > 0:
        raise SpecError(["bound: need alpha > 1 and beta > 0"])
    F = dists.DiscretePower(args.alpha, args.cutoff)
    rep = limits.growth_bound_check(F, CeilPower(args.beta))
    d = rep.to_dict()
    if args.as_json:
        print(json.dumps(d, indent=2, default=float))
    else:
        print(f"alpha={args.alpha:g} beta={args.beta:g}: {'feasible' if rep.feasible else 'infeasible'}")
        for k in ("term_exponent", "tail_share", "phi_tail_slope", "bound_ok", "recursion_ok", "witness_x"):
            print(f"  {k}: {d[k]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ruinwalk", description="First-exceedance experiments for heavy-tailed walks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a spec file or preset")
    r.add_argument("spec", help="path to spec JSON or preset name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="results", help="output directory (default: results)")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a spec field by dotted key, value parsed as JSON")
    r.set_defaults(func=_cmd_run)

    ps = sub.add_parser("presets", help="list bundled experiments")
    ps.add_argument("--json", metavar="NAME", help="print one preset as JSON")
    ps.set_defaults(func=_cmd_presets)

    t = sub.add_parser("tails", help="tabulate tails of a distribution JSON")
    t.add_argument("dist")
    t.add_argument("--x", type=float, nargs="+", required=True)
    t.add_argument("--json", dest="as_json", action="store_true")
    t.set_defaults(func=_cmd_tails)

    b = sub.add_parser("bound", help="growth-bound feasibility check")
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--beta", type=float, required=True)
    b.add_argument("--cutoff", type=int, default=1_000_000)
    b.add_argument("--json", dest="as_json", action="store_true")
    b.set_defaults(func=_cmd_bound)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("ruinwalk: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except SpecError as exc:
        for prob in exc.problems:
            print(f"ruinwalk: invalid: {prob}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"ruinwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
