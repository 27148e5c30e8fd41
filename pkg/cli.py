#!/usr/bin/env python3
"""
Command-line entry point for running, sweeping and replaying experiments.

Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 configuration or
argument error, 3 numerical blow-up. The seed is taken from --seed, then
the config's "seed", then SPDE_SEED, then 0.
"""
import argparse
import json
import logging
import sys
from typing import Any, List, Optional

from dotenv import load_dotenv

from app.core.config import settings
from app.core.errors import SimulationError
from app.services.experiment_service import ExperimentService

# Load environment variables
load_dotenv()

logger = logging.getLogger("spde-uniqueness")


def parse_values(tokens: List[str]) -> List[Any]:
    """Split comma-separated tokens and read each value as JSON, else as a string."""
    values = []
    for token in tokens:
        for part in token.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                values.append(json.loads(part))
            except json.JSONDecodeError:
                values.append(part)
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Stochastic FP/PME uniqueness harness")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Master seed (unsigned 64-bit)")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--threads", type=int, help="Worker threads for ensemble members")
    common.add_argument("--no-figures", action="store_true", help="Skip SVG figures")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    run_parser = subparsers.add_parser("run", parents=[common], help="Run one experiment")
    run_parser.add_argument("config", help="Experiment config (JSON)")

    sweep_parser = subparsers.add_parser("sweep", parents=[common], help="Run one experiment per axis value")
    sweep_parser.add_argument("config", help="Experiment config (JSON)")
    sweep_parser.add_argument("--axis", required=True, help="dt, delta, N, epsilon, ensemble_size or a dotted key")
    sweep_parser.add_argument("--values", nargs="*", default=[], help="Values, space or comma separated")

    replay_parser = subparsers.add_parser("replay", parents=[common], help="Rerun a config on dumped increments")
    replay_parser.add_argument("increments", help="increments.bin from an earlier run")
    replay_parser.add_argument("config", help="Experiment config (JSON)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if settings.debug else settings.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        force=True,
    )

    if args.command is None:
        parser.print_help()
        return 2

    service = ExperimentService(
        output_dir=args.out,
        threads=args.threads,
        figures=False if args.no_figures else None,
    )
    try:
        if args.command == "run":
            result = service.run(args.config, seed=args.seed, out_dir=args.out)
        elif args.command == "sweep":
            result = service.sweep(args.config, args.axis, parse_values(args.values), seed=args.seed, out_dir=args.out)
        else:
            result = service.replay(args.increments, args.config, seed=args.seed, out_dir=args.out)
    except SimulationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    summary = {"exit_code": result.exit_code, "out_dir": str(result.out_dir)}
    if args.command == "sweep":
        summary["rows"] = [{k: row[k] for k in ("index", "value", "seed", "passed")} for row in result.rows]
    else:
        summary["verdicts"] = result.report.verdicts.dict()
    print(json.dumps(summary, indent=2, default=str))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
