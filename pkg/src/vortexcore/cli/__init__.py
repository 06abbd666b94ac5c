"""Command-line entry point: ``vortexcore <subcommand> [--config PATH] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..dynamics import CFLError
from ..geometry import GreenSolveError
from ..pointvortex import KRDescentError
from . import commands
from .config import ConfigError, RunConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = {
    "robin": commands.cmd_robin,
    "kr-min": commands.cmd_kr_min,
    "pv-orbit": commands.cmd_pv,
    "steady": commands.cmd_steady,
    "sweep": commands.cmd_sweep,
    "evolve": commands.cmd_evolve,
    "stability": commands.cmd_stability,
    "profile-steady": commands.cmd_profile_steady,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vortexcore", description="Concentrated steady vortices: solve, sweep, evolve.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="key=value (or JSON) configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--out", metavar="DIR", help="output directory (same as output.dir)")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> dict:
    """Parse arguments and run one subcommand; raises on failure."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.dir={args.out}")
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    cfg = RunConfig.load(args.config, overrides)
    fn = COMMANDS[args.command]
    if args.command == "sweep":
        return fn(cfg, jobs=args.jobs)
    return fn(cfg)


def main(argv=None) -> int:
    try:
        out = run(argv)
    except ConfigError as exc:
        print(f"vortexcore: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (commands.NumericalFailure, GreenSolveError, KRDescentError, CFLError,
            ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"vortexcore: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for key in ("csv", "fits_csv", "vxf"):
        if key in out:
            print(out[key])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
