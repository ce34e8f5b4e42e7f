"""Command-line entry point: ``committee-lab <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import sys

from committee_lab import runner
from committee_lab.pools import PoolFileError
from committee_lab.scenario import load_scenario
from committee_lab.state_system import ConfigError

COMMANDS = {
    "simulate": runner.cmd_simulate,
    "verify-bounds": runner.cmd_verify_bounds,
    "curves": runner.cmd_curves,
    "sizing": runner.cmd_sizing,
    "separation": runner.cmd_separation,
    "pool-gen": runner.cmd_pool_gen,
    "ablate": runner.cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="committee-lab", description="Committee-search simulation and verification.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", help="flat JSON scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (a run-id subdirectory is created)")
    p.add_argument("--allow-env-override", action="store_true",
                   help="let COMMITTEE_LAB_* variables override scenario-file keys")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "trials": args.trials, "workers": args.workers, "out": args.out}
    try:
        sc = load_scenario(args.scenario, overrides, allow_env_override=args.allow_env_override)
        return COMMANDS[args.command](sc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG
    except PoolFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
