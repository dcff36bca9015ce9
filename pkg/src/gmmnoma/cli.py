"""Command-line entry point.

    gmmnoma run CONFIG [--out PATH] [--seed S] [--trials T] [--epsilon E] [--c3 C]
    gmmnoma theory --gamma-db START:STEP:STOP [--n N] [--c3 C] [--gap-db G]
    gmmnoma validate-config CONFIG

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .modem import ConfigurationError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _grid(text: str) -> list[float]:
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if len(vals) == 1:
        return vals
    if len(vals) != 3 or vals[1] <= 0 or vals[2] < vals[0]:
        raise argparse.ArgumentTypeError("grid must be START:STEP:STOP with STEP > 0")
    start, step, stop = vals
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmmnoma", description="GMM-clustering NOMA receiver experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a Monte Carlo experiment from a TOML config")
    run.add_argument("config")
    run.add_argument("--out", default="-", help="CSV (or .json) destination, '-' for stdout")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--epsilon", type=float)
    run.add_argument("--c3", type=float)
    run.add_argument("--workers", type=int)

    th = sub.add_parser("theory", help="evaluate the closed-form SER predictors on a grid")
    th.add_argument("--gamma-db", type=_grid, required=True,
                    help="SNR grid of the weakest user, START:STEP:STOP in dB")
    th.add_argument("--n", type=int, default=500)
    th.add_argument("--c3", type=float)
    th.add_argument("--gap-db", type=float, help="two-user power gap; omit for one user")
    th.add_argument("--out", default="-")

    val = sub.add_parser("validate-config", help="check a config file and exit")
    val.add_argument("config")
    return p


def _write(rows, out: str):
    if out == "-":
        harness.emit_csv(rows, sys.stdout)
    elif out.endswith(".json"):
        harness.emit_json(rows, out)
    else:
        harness.emit_csv(rows, out)


def _run(args) -> int:
    cfg = harness.load_config(args.config)
    for key in ("seed", "trials", "epsilon", "c3", "workers"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg, key, v)
    cfg.validate()
    rows = harness.run_experiment(cfg)
    _write(rows, args.out)
    return 0


def _theory(args) -> int:
    gaps = [] if args.gap_db is None else [args.gap_db]
    cfg = harness.ExperimentConfig(scenario="TheoryOnly", snr_db=args.gamma_db,
                                   power_gaps_db=gaps, blocklength=args.n, c3=args.c3,
                                   trials=1)
    cfg.validate()
    _write(harness.run_experiment(cfg), args.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if not e.code else 1
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "theory":
            return _theory(args)
        harness.load_config(args.config)
        print(f"{args.config}: ok")
        return 0
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything past validation is a runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
