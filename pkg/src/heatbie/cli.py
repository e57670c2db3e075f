"""Command-line entry point: solve / sweep / evolve on a config file."""

import argparse
import os
import sys

from .config import load_config
from .driver import run_experiment
from .exceptions import ConfigError, ConvergenceError, HeatbieError, StallError


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="heatbie",
        description="Boundary-integral / spectral solver for the forced heat "
                    "equation and modified Helmholtz problems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("solve", "single modified-Helmholtz solve (first sweep point)"),
            ("sweep", "full sweep over the configured n_u/alpha2/k lists"),
            ("evolve", "time evolution (heat or allen-cahn mode)")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config RNG seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (1 = deterministic)")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.threads = args.threads
        if args.out is not None:
            cfg.out_dir = args.out
        if args.command == "solve":
            cfg.n_u_list = cfg.n_u_list[:1]
            cfg.alpha2_list = cfg.alpha2_list[:1]
            cfg.regularity_list = cfg.regularity_list[:1]
            if cfg.mode not in ("modhelm", "modhelm-analytic-ext"):
                raise ConfigError("solve requires a modhelm mode")
        elif args.command == "evolve":
            if cfg.mode not in ("heat", "allen-cahn"):
                raise ConfigError("evolve requires mode heat or allen-cahn")
        if cfg.out_dir is not None:
            os.makedirs(cfg.out_dir, exist_ok=True)
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, StallError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 2
    except HeatbieError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    failures = [r for r in report.rows if r.error and r.error != "reference"]
    for row in report.rows:
        status = row.error or "ok"
        print(f"n_u={row.n_u} alpha2={row.alpha2:g} k={row.regularity} "
              f"tol={row.tol:g} rel_l2={row.rel_l2:.3e} "
              f"rel_linf={row.rel_linf:.3e} [{status}]")
    if failures:
        print(f"{len(failures)} sweep point(s) failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
