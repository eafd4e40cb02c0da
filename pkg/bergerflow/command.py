"""Registry of the subcommands implemented in :mod:`command_impl`."""

import argparse
import collections.abc
import dataclasses
import typing

from .config import RunConfig

_T_COMMAND = typing.Callable[[RunConfig, argparse.Namespace], int]


@dataclasses.dataclass
class Argument:
    """Definition of additional argument of the subcommand."""

    flags: tuple[str, ...]
    options: dict[str, typing.Any] = dataclasses.field(default_factory=dict)


@dataclasses.dataclass
class Command:
    """Subcommand definition."""

    func: _T_COMMAND
    name: str
    arguments: collections.abc.Sequence[Argument]
    description: str | None = None

    @property
    def summary(self) -> str:
        """First line of the description."""
        return (self.description or "").strip().split("\n", maxsplit=1)[0]


COMMANDS: dict[str, Command] = {}


def command(
    name: str | None = None,
    arguments: collections.abc.Sequence[Argument] = (),
) -> typing.Callable[[_T_COMMAND], _T_COMMAND]:
    """Decorate function to register it as subcommand."""

    def decorator(func: _T_COMMAND) -> _T_COMMAND:
        c = Command(func, name or func.__name__, arguments, func.__doc__)
        COMMANDS[c.name] = c
        return func

    return decorator


def add_subparsers(parser: argparse.ArgumentParser) -> None:
    """Add one subparser per registered command."""
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for c in COMMANDS.values():
        p = sub.add_parser(c.name, help=c.summary, description=c.description)
        for arg in c.arguments:
            p.add_argument(*arg.flags, **arg.options)
        p.set_defaults(func=c.func)
