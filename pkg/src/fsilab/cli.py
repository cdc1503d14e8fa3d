"""Command-line entry point.

Every command reads an optional JSON config (strict flat schema), applies
``--override key=value`` pairs on top, and dispatches to the matching
runner.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import (ExperimentConfig, apply_overrides, load_doc,
                     validate_doc)
from .errors import ConfigError, NumericalError, VerificationError

COMMANDS = ("simulate", "find-periodic", "sweep-frequency", "sweep-radius",
            "sweep-eta", "verify", "symmetric-mode", "report")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fsilab",
        description="numerical laboratory for a penalized fluid plus "
                    "spring-mounted rotor system")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="path to a flat JSON config file")
        p.add_argument("--out", default=None,
                       help="output directory (overrides output.dir)")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel workers for sweep points")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="set one config key (repeatable)")
    return parser


def _build_doc(args):
    raw = load_doc(args.config) if args.config else {}
    raw = apply_overrides(raw, args.override)
    raw["experiment.kind"] = args.command
    if args.out is not None:
        raw["output.dir"] = args.out
    if args.jobs is not None:
        raw["sweep.jobs"] = args.jobs
    return raw


def main(argv=None):
    args = build_parser().parse_args(argv)
    from . import runner

    try:
        if args.command == "report":
            out = args.out
            if out is None and args.config is not None:
                out = ExperimentConfig.from_doc(_build_doc(args)).outdir
            if out is None:
                raise ConfigError("report needs --out (or a config with "
                                  "output.dir)")
            summary = runner.run_report(out)
            print(f"wrote plotting script for {len(summary['files'])} "
                  f"table(s) in {summary['out']}")
            return 0

        raw = _build_doc(args)
        if args.command == "verify":
            doc = validate_doc(raw)
            ok, _ = runner.run_verify(doc, outdir=args.out, printer=print)
            if not ok:
                print("verification failed", file=sys.stderr)
                return 4
            return 0

        cfg = ExperimentConfig.from_doc(raw)
        if args.command == "simulate":
            summary = runner.run_simulate(cfg)
            print(f"simulated {summary['n_steps']} steps; final energy "
                  f"{summary['final_E']:.6g}; worst balance defect "
                  f"{summary['balance_max']:.3e}; outputs in "
                  f"{summary['out']}")
        elif args.command == "find-periodic":
            def progress(it, residual):
                print(f"iteration {it:3d}  residual {residual:.6e}")
            summary = runner.run_find_periodic(cfg, on_iteration=progress)
            print(f"converged in {summary['iterations']} iterations "
                  f"(residual {summary['residual']:.3e}); archive in "
                  f"{summary['out']}")
        elif args.command == "sweep-frequency":
            summary = runner.run_sweep_frequency(cfg)
            print(f"swept {summary['rows']} periods; table in "
                  f"{summary['out']}")
        elif args.command == "sweep-radius":
            summary = runner.run_sweep_radius(cfg)
            print(f"swept {summary['rows']} box sizes; table in "
                  f"{summary['out']}")
        elif args.command == "sweep-eta":
            summary = runner.run_sweep_eta(cfg)
            print(f"swept {summary['rows']} mollifier radii; table in "
                  f"{summary['out']}")
        elif args.command == "symmetric-mode":
            summary = runner.run_symmetric_mode(cfg)
            print(f"decoupling report in {summary['out']}: max|theta| = "
                  f"{summary['max_theta']:.3e}, max|delta| = "
                  f"{summary['max_delta']:.3e}")
            if not summary["ok"]:
                print("decoupling verification failed", file=sys.stderr)
                return 4
        else:  # pragma: no cover - argparse restricts the choices
            raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
