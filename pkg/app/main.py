"""
FormulaHunter - mixing enthalpy formulas for lanthanide phosphate solid solutions
Command-line entry point
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from app.api.cli_routes import router
from app.models.errors import ConfigError, FormulaHunterError, MissingArtifactError
from app.utils.config_loader import ENV_LOG_LEVEL, load_config

# Load environment variables
load_dotenv()

logger = logging.getLogger("formulahunter")


def _global_flags(parser: argparse.ArgumentParser, default=None):
    parser.add_argument("--config", default=default, help="TOML run configuration")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--seed", type=int, default=default, help="base random seed")
    parser.add_argument("--threads", type=int, default=default, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formulahunter",
        description="Kernel ridge regression and sparse formula search for mixing enthalpies",
    )
    _global_flags(parser)
    subcommands = parser.add_subparsers(dest="command", required=True)
    for name, command in router.commands.items():
        # flags are accepted after the subcommand too
        _global_flags(subcommands.add_parser(name, help=command.help), default=argparse.SUPPRESS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; exit 0 on success, 1 on config or missing input, 2 on failure"""
    logging.basicConfig(
        level=getattr(logging, os.getenv(ENV_LOG_LEVEL, "INFO").upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config, out=args.out, seed=args.seed, threads=args.threads)
        artifacts = router.dispatch(args.command, config)
    except (ConfigError, MissingArtifactError) as e:
        print(f"❌ {args.command}: {e}", file=sys.stderr)
        return 1
    except FormulaHunterError as e:
        print(f"❌ {args.command}: {e}", file=sys.stderr)
        return 2

    print(f"✅ {args.command}: wrote {len(artifacts)} artifacts")
    for path in artifacts:
        print(f"   {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
