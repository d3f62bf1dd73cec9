"""
Command-line entry point.

    tvtrack run [--config FILE] [--h ...] [--method ...] [--lambda R] [--seeds ...]
                [--cmax N] [--batch B] [--out PATH] [--workers W]
    tvtrack coeffs --p P --n N
    tvtrack rate --in results.csv

Exit codes: 0 success, 1 configuration error, 2 divergence in a run.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .coeffs import BasisSpec, regression_coefficients, reproduction_residual, norm_profile
from .config import ConfigError, default_config, load_config
from .harness import MethodSpec, read_rates, run_grid, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _split(values, conv):
    out = []
    for v in values or ():
        out.extend(conv(s) for s in v.split(",") if s.strip())
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="tvtrack", description=__doc__.split("\n")[1].strip() or None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid and write a results CSV")
    run.add_argument("--config", help="JSON experiment file (defaults to the built-in benchmark grid)")
    run.add_argument("--h", nargs="+", help="sampling periods (space or comma separated)")
    run.add_argument("--method", nargs="+", help="tvsgd | sharp:p=2 | sharp:p=3 | sharp:online")
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--seeds", nargs="+")
    run.add_argument("--cmax", type=int)
    run.add_argument("--batch", type=int)
    run.add_argument("--t-end", type=float)
    run.add_argument("--workers", type=int)
    run.add_argument("--out")

    co = sub.add_parser("coeffs", help="print polynomial regression coefficients and their norms")
    co.add_argument("--p", type=int, required=True)
    co.add_argument("--n", type=int, required=True)

    rate = sub.add_parser("rate", help="fit log-log error slopes per method from a results CSV")
    rate.add_argument("--in", dest="path", required=True)
    return ap


def _cmd_run(args):
    cfg = load_config(args.config) if args.config else default_config()
    c_max = args.cmax
    methods = None
    if args.method:
        try:
            methods = tuple(MethodSpec.parse(m, c_max=cfg.c_max if c_max is None else c_max)
                            for m in _split(args.method, str))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        h = tuple(_split(args.h, float)) or None
        seeds = tuple(_split(args.seeds, int)) or None
    except ValueError as exc:
        raise ConfigError(f"bad list value: {exc}") from None
    if args.lam is not None and args.lam < 0:
        raise ConfigError("lambda must be non-negative")
    for name in ("cmax", "batch", "workers"):
        v = getattr(args, name)
        if v is not None and v < (0 if name == "cmax" else 1):
            raise ConfigError(f"--{name} out of range: {v}")
    cfg = cfg.with_overrides(h=h, methods=methods, seeds=seeds, lam=args.lam, c_max=c_max,
                             batch=args.batch, t_end=args.t_end, workers=args.workers,
                             output=args.out)
    result = run_grid(cfg)
    write_csv(result, cfg.output)
    for a in result.aggregates:
        print(f"{a.method:<14} h={a.h:<8g} n={'' if a.n is None else a.n:<5} "
              f"err={a.avg_err:.6g} ± {a.std_err_over_seeds:.3g} ({a.seeds} seeds)")
    print(f"wrote {cfg.output}")
    if result.failures:
        for c in result.failures:
            print(f"FAILED {c.method} h={c.h:g} seed={c.seed}: {c.error}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_coeffs(args):
    basis = BasisSpec(args.p)
    alpha = regression_coefficients(basis, args.n)
    l2, l1 = norm_profile(alpha)
    with np.printoptions(precision=17, linewidth=100):
        for i, a in enumerate(alpha.alpha, start=1):
            print(f"alpha[{i}] = {a:.17g}")
    print(f"l2 = {l2:.17g}")
    print(f"l1 = {l1:.17g}")
    print(f"n*l2^2 = {args.n * l2 * l2:.17g}")
    print(f"residual = {reproduction_residual(alpha, basis):.3e}")
    return EXIT_OK


def _cmd_rate(args):
    try:
        rates = read_rates(args.path)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.path}: {exc}") from None
    if not rates:
        raise ConfigError(f"{args.path}: no method has 3 or more aggregate rows")
    for m, slope in rates.items():
        print(f"{m:<14} slope = {slope:.6f}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "coeffs": _cmd_coeffs, "rate": _cmd_rate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
