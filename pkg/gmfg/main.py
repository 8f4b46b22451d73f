import argparse
import logging
from pathlib import Path
from typing import Optional, Sequence

from gmfg import __version__
from gmfg.commands import (
    cmd_convergence,
    cmd_graphon_study,
    cmd_nash,
    cmd_report,
    cmd_simulate,
    cmd_solve,
)
from gmfg.exceptions import ConfigError, GmfgError
from gmfg.utilities.config import load_experiment_config, settings

logger = logging.getLogger(__name__)

COMMANDS = ("solve", "simulate", "nash", "convergence", "graphon-study", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmfg",
        description="Graphon mean field games: grid solver, n-player simulator and Nash diagnostics.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, required=name != "report", help="experiment TOML file")
        cmd.add_argument("--out", type=Path, default=None, help="parent directory for run directories")
        cmd.add_argument("--seed", type=int, default=None, help="overrides simulation.seed")
        if name in ("simulate", "nash", "convergence", "report"):
            cmd.add_argument("--run", type=Path, default=None, required=name == "report",
                             help="solved run directory to reuse")
        if name == "convergence":
            cmd.add_argument("--no-exploitability", action="store_true",
                             help="skip the deviation experiments")
    return parser


def dispatch(args: argparse.Namespace) -> int:
    out = args.out if args.out is not None else Path(settings.output_dir)
    if args.command == "report":
        return cmd_report(args.run, out)

    overrides = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        overrides["simulation.seed"] = args.seed
    config = load_experiment_config(args.config, overrides)
    logger.info(f"Running '{args.command}' with {args.config}")

    if args.command == "solve":
        return cmd_solve(config, out)
    if args.command == "simulate":
        return cmd_simulate(config, out, args.run)
    if args.command == "nash":
        return cmd_nash(config, out, args.run)
    if args.command == "convergence":
        return cmd_convergence(config, out, args.run, exploitability=not args.no_exploitability)
    return cmd_graphon_study(config, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code (0 ok, 1 config, 2 non-convergence, 3 numerics)."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        code = dispatch(args)
    except GmfgError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    logger.info(f"'{args.command}' finished with exit code {code}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
