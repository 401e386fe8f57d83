"""Command-line front end: one subcommand per stage plus `full`.

Exit codes: 0 on success, 1 for a failed stage (stderr names the stage),
2 for configuration problems.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from qlansim.runner import FULL_STAGES, STAGES, StageError, run_stages
from qlansim.scenario import ConfigError, default_scenario, load_scenario

_HELP = {
    "sync-jitter": "histogram relative clock delays per sync technology",
    "tdc-calibrate": "recover a planted tap profile by code density",
    "coincidence": "correlate one link's tagged detection streams",
    "tomography": "reconstruct every link's state from simulated counts",
    "keyplane": "simulate key production, rotations, and the pool balance",
    "full": "run the whole pipeline into one artifact directory",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlansim",
        description="desk-scale simulator of a time-synchronized entanglement LAN",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in STAGES + ("full",):
        sub = commands.add_parser(name, help=_HELP[name])
        sub.add_argument(
            "--config", type=Path, metavar="PATH",
            help="scenario file (YAML; JSON by .json suffix); omitted = built-in scenario",
        )
        sub.add_argument("--seed", type=int, metavar="N", help="override the scenario seed")
        sub.add_argument(
            "--out", type=Path, metavar="DIR",
            help="run directory (default qlansim-<command>)",
        )
        sub.add_argument(
            "--format", choices=("csv", "json"), default="csv", dest="fmt",
            help="encoding for delimited outputs",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            scenario = load_scenario(args.config, seed=args.seed)
        elif args.seed is not None:
            scenario = default_scenario(seed=args.seed)
        else:
            scenario = default_scenario()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return 2

    stages = FULL_STAGES if args.command == "full" else (args.command,)
    out_dir = args.out if args.out is not None else Path(f"qlansim-{args.command}")
    try:
        manifest = run_stages(scenario, out_dir, stages, args.fmt)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except StageError as err:
        print(f"stage {err.stage} failed: {err}", file=sys.stderr)
        return 1
    for stage in manifest["stages"]:
        print(f"{stage['name']}: complete ({len(stage['outputs'])} files)")
    print(f"run directory: {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
