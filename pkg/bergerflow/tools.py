"""Terminal output helpers."""

import collections.abc
import itertools
import json
import os
import shutil
import typing

from prompt_toolkit import print_formatted_text
from prompt_toolkit.document import Document
from prompt_toolkit.formatted_text import FormattedText
from prompt_toolkit.lexers import PygmentsLexer
from pygments.lexers.data import JsonLexer

FText = collections.abc.Iterable[tuple[str, str]]

PASS_STYLE = "ansigreen"
FAIL_STYLE = "ansired"
DETAIL_STYLE = "ansibrightblack"
ELLIPSIS = "..."


def print_ftext(fstrs: FText) -> None:
    """Call :meth:`print_formatted_text` with :class:`FormattedText`."""
    print_formatted_text(FormattedText(list(fstrs)))


def truncated(ftext: FText, width: int) -> collections.abc.Iterator[tuple[str, str]]:
    """Cut styled fragments at ``width`` characters and mark the cut."""
    room = width - len(ELLIPSIS)
    for style, text in ftext:
        if len(text) > room:
            yield style, text[: max(room, 0)]
            yield "", ELLIPSIS
            return
        room -= len(text)
        yield style, text


def print_row(ftext: FText | tuple[str, str] | str) -> None:
    """Print one line cut to the terminal width."""
    if isinstance(ftext, str):
        ftext = ("", ftext)
    if isinstance(ftext, tuple):
        ftext = [typing.cast(tuple[str, str], ftext)]
    print_ftext(truncated(ftext, shutil.get_terminal_size().columns))


def verdict(ok: bool) -> tuple[str, str]:
    """Styled PASS/FAIL fragment."""
    return (PASS_STYLE, "PASS") if ok else (FAIL_STYLE, "FAIL")


def print_check(name: str, ok: bool, detail: str = "") -> None:
    """Print one pass/fail row."""
    print_row([
        verdict(ok),
        ("", f" {name}"),
        (DETAIL_STYLE, f"  {detail}" if detail else ""),
    ])


def json_ftext(text: str) -> collections.abc.Iterator[tuple[str, str]]:
    """Style JSON text line by line with the pygments lexer."""
    line = PygmentsLexer(JsonLexer).lex_document(Document(text))
    for i in range(text.count("\n") + 1):
        if i:
            yield "", "\n"
        for style, fragment, *_ in line(i):
            yield style, fragment


def print_json(data: object, prefix: str = "") -> None:
    """Print given data as highlighted JSON."""
    text = json.dumps(data, indent=2, default=str)
    print_ftext(itertools.chain([("", prefix)], json_ftext(text)))


def isatty() -> bool:
    """Standard output is an interactive terminal."""
    return os.isatty(1)
