"""Command-line entry point: ``dcdp run | table | adjoint-check``."""

from __future__ import annotations

import argparse
import sys

from .exceptions import ConfigError
from .io import write_csv
from .operators import adjoint_check, parse_operator_spec

ADJOINT_TOLERANCE = 1e-10


def _cmd_run(args):
    from .experiment import load_config, run_experiment

    cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    rows = run_experiment(cfg, jobs=args.jobs)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells, {failed} failed; results in {cfg.out}/results.csv")
    return 0


def _cmd_table(args):
    from .experiment import SUMMARY_HEADER, format_table, summarize, summary_rows

    summary = summarize(args.results)
    sys.stdout.write(format_table(summary))
    if args.csv:
        write_csv(args.csv, SUMMARY_HEADER, summary_rows(summary))
    return 0


def _cmd_adjoint(args):
    op = parse_operator_spec(args.spec)
    err = adjoint_check(op, n_trials=args.trials, seed=args.seed)
    ok = err < ADJOINT_TOLERANCE
    print(f"{op!r}: max relative mismatch {err:.3e} ({'pass' if ok else 'FAIL'})")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dcdp", description="Decoupled data consistency with diffusion purification.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from an INI config")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1, help="cells solved in parallel")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.set_defaults(func=_cmd_run)

    table = sub.add_parser("table", help="summarise a results.csv as mean ± std")
    table.add_argument("results")
    table.add_argument("--csv", default=None, help="also write the summary as CSV")
    table.set_defaults(func=_cmd_table)

    adj = sub.add_parser("adjoint-check", help="randomised inner-product test of an operator")
    adj.add_argument("spec", help='e.g. "downsample:factor=4" or "motion_blur:angle=30"')
    adj.add_argument("--trials", type=int, default=20)
    adj.add_argument("--seed", type=int, default=0)
    adj.set_defaults(func=_cmd_adjoint)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
