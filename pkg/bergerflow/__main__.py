"""Implementation of command line application."""

import argparse
import logging
import pathlib
import sys

from . import VERSION
from . import command_impl as _  # noqa F401
from .command import add_subparsers
from .config import ConfigError, load_config

logger = logging.getLogger(__name__)


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        msg = f"invalid node count list: {value!r}"
        raise argparse.ArgumentTypeError(msg) from None


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse passed arguments and return result."""
    parser = argparse.ArgumentParser(
        description="Warped Berger Ricci flow simulator and verification suite"
    )
    parser.add_argument("--version", action="version", version="%(prog)s " + VERSION)
    parser.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help="Enable logging that provides numerical debug info.",
    )
    parser.add_argument(
        "--config",
        type=pathlib.Path,
        help="Configuration file applied after the ones from the search path.",
    )
    parser.add_argument(
        "--out",
        type=pathlib.Path,
        help="Output directory (default: $BERGERFLOW_OUT or the XDG data directory).",
    )
    parser.add_argument(
        "--grid",
        type=_int_list,
        help="Node count overriding the configuration, comma separated list for sweep.",
    )
    parser.add_argument(
        "--resume",
        type=pathlib.Path,
        help="Checkpoint file to continue the run from.",
    )
    parser.add_argument(
        "--strict",
        action="store_true",
        help="Unknown configuration keys and failed report gates are errors.",
    )
    add_subparsers(parser)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    """Application's entrypoint."""
    logging.basicConfig(format="[%(asctime)s] [%(levelname)s] - %(message)s")
    args = parse_args(argv)
    if args.debug:
        logging.root.setLevel(logging.DEBUG)
    try:
        config = load_config(args.config, args.strict)
    except (ConfigError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    config.debug = config["run"]["debug"] or args.debug
    try:
        return int(args.func(config, args))
    except (ValueError, RuntimeError, OSError) as exc:
        if config.debug:
            logger.exception("Command %s failed", args.command)
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
