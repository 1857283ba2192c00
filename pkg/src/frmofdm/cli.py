"""Command-line entry point: ``frmofdm <subcommand> [options]``."""
import argparse
import logging
import sys

from . import experiments
from .experiments import ConfigError, load_config, run_experiment, write_rows
from .selftest import run_selftest


def build_parser():
    parser = argparse.ArgumentParser(prog="frmofdm", description="FRM-OFDM simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in experiments.EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int, help="number of Monte-Carlo trials")
        p.add_argument("--out", help="CSV output path (default stdout)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    sub.add_parser("selftest", help="run the invariant suite")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _selftest():
    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "selftest":
        return _selftest()
    overrides = list(args.set)
    for key in ("seed", "trials", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = load_config(args.config, overrides)
        rows = run_experiment(args.command, cfg)
    except (ConfigError, OSError) as exc:
        print(f"frmofdm: error: {exc}", file=sys.stderr)
        return 2
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            write_rows(rows, fh)
    else:
        write_rows(rows, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
