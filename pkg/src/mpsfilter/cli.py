"""Command-line interface: run, validate, and analyze experiments.

Exit status is 0 on success (including runs with recorded chain
failures) and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import runner
from .config import load_config, resolve_schedule

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpsfilter",
        description="Spectral-filter experiments on 1-D spin chains.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.add_argument("--output", help="artifact directory (overrides the "
                       "config and the MPSFILTER_OUTPUT_ROOT root)")
    p_run.add_argument("--backend", choices=("mps", "exact"),
                       help="override the configured backend")
    p_run.add_argument("--dmax", type=int, help="override d_max")
    p_run.add_argument("--seed", type=int, help="override the seed")
    p_run.add_argument("--workers", type=int,
                       help="override the worker-pool width")
    p_run.add_argument("--alpha-override", type=float, dest="alpha_override",
                       help="override the spectral rescaling margin")
    p_run.add_argument("--dry-run", action="store_true",
                       help="validate and write the manifest only")

    p_val = sub.add_parser("validate",
                           help="parse a config and print the run plan")
    p_val.add_argument("config", help="path to a key = value config file")

    p_an = sub.add_parser("analyze",
                          help="refresh scaling fits from saved traces")
    p_an.add_argument("directory", help="artifact directory of a run")
    return parser


def _apply_overrides(cfg, args):
    updates = {}
    if args.backend is not None:
        updates["backend"] = args.backend
    if args.dmax is not None:
        updates["d_max"] = args.dmax
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.alpha_override is not None:
        updates["alpha"] = args.alpha_override
    return dataclasses.replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "analyze":
        try:
            result = runner.analyze(args.directory)
        except (OSError, ValueError) as err:
            print(f"analyze error: {err}", file=sys.stderr)
            return 2
        for row in result["table"]:
            print(f"N={row['N']:<4d} M={row['M']:<6d} "
                  f"variance={row['variance']:.6e} "
                  f"energy={row['energy']:+.6e} "
                  f"S_half={row['S_half']:.4f} "
                  f"max_bond={row['max_bond']}")
        for fit in result["fits"]:
            eta = fit["params"]["exponent"]
            err = fit["errors"]["exponent"]
            print(f"N={fit['N']:<4d} variance ~ M^({eta:+.4f} "
                  f"+- {err:.4f}) over {fit['n_points']} runs")
        return 0

    try:
        cfg = load_config(args.config)
        if args.command == "run":
            cfg = _apply_overrides(cfg, args)
        plan = [(n, resolve_schedule(cfg, n)) for n in cfg.ns]
    except (OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"model={cfg.model} params={cfg.param_dict} "
              f"backend={cfg.backend} d_max={cfg.d_max} seed={cfg.seed}")
        for n, orders in plan:
            print(f"N={n}: M={orders}")
        return 0

    outdir = runner.run(cfg, output=args.output, dry_run=args.dry_run)
    print(outdir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
