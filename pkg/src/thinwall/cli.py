"""Command-line entry point.

::

    thinwall run <config> [--out DIR] [--max-iters N] [--no-maxsize]
    thinwall diagnostics strips <config>
    thinwall mesh-info <vtk>
"""

from __future__ import annotations

import argparse
import logging
import sys

from .driver.config import load_config, replace
from .driver.diagnostics import diagnostic_strips
from .driver.run import RunFailed, resolve, run
from .driver.vtk import mesh_info
from .errors import ThinwallError


def _cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.max_iters is not None:
        overrides["optimizer.max_iterations"] = args.max_iters
    if args.no_maxsize:
        overrides["constraint.maxsize"] = False
    if args.out is not None:
        overrides["output.directory"] = args.out
    if overrides:
        config = replace(config, **overrides)

    def progress(row):
        if not args.quiet:
            print(f"{row['iter']:4d}  F={row['F']:.6g}  g1={row['g1']:+.2e}  g2={row['g2']:+.2e}  "
                  f"max_rhobar={row['max_rhobar']:.3f}  elements={row['elements']}", flush=True)

    try:
        result = run(config, progress=progress)
    except RunFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(f"{result.reason} after {len(result.log)} iterations; "
          f"F={result.final_objective:.6g}; output in {config.output.directory}")
    return 0


def _cmd_strips(args) -> int:
    config = load_config(args.config)
    report = diagnostic_strips(resolve(config).features.min_diameter)
    print(report.table())
    return 0


def _cmd_mesh_info(args) -> int:
    info = mesh_info(args.vtk)
    for key, value in info.items():
        print(f"{key}: {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinwall",
                                     description="Uniform-thickness topology optimization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an optimization")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--max-iters", type=int, help="iteration budget")
    p.add_argument("--no-maxsize", action="store_true", help="disable the max-size constraint")
    p.add_argument("-q", "--quiet", action="store_true", help="no per-iteration output")
    p.set_defaults(func=_cmd_run)

    d = sub.add_parser("diagnostics", help="diagnostic modes")
    dsub = d.add_subparsers(dest="mode", required=True)
    s = dsub.add_parser("strips", help="strip-pattern detector table")
    s.add_argument("config")
    s.set_defaults(func=_cmd_strips)

    m = sub.add_parser("mesh-info", help="summarize a VTK snapshot")
    m.add_argument("vtk")
    m.set_defaults(func=_cmd_mesh_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ThinwallError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
