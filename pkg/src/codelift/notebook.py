"""Reading ``.ipynb`` documents and reducing code cells to their functional logic.

Parsing is done on the raw JSON rather than through ``nbformat`` so that the
three failure modes (bad JSON, wrong major version, missing cell fields) map
onto distinct exceptions.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any

from .errors import MalformedJson, MissingField, UnsupportedFormat

logger = logging.getLogger(__name__)

CELL_KINDS = ("code", "markdown", "raw")

# Cell magics whose body is still Python; any other ``%%name`` marks a
# foreign-language cell whose body is dropped entirely.
PYTHON_CELL_MAGICS = frozenset(
    {"time", "timeit", "capture", "prun", "debug", "python", "python3"}
)

_MAGIC_LINE = re.compile(r"^(%%|%|!)")


@dataclass(frozen=True)
class NotebookCell:
    index: int
    kind: str
    source: str
    outputs: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Notebook:
    cells: tuple[NotebookCell, ...]
    format_version: tuple[int, int]
    metadata: dict = field(default_factory=dict, compare=False)

    def code_cells(self) -> list[NotebookCell]:
        return [c for c in self.cells if c.kind == "code"]

    def kind_counts(self) -> dict[str, int]:
        counts = {k: 0 for k in CELL_KINDS}
        for cell in self.cells:
            counts[cell.kind] += 1
        return counts


@dataclass(frozen=True)
class CleanCell:
    """A code cell after magic removal and comment stripping.

    ``removed`` lists the magic/shell lines taken out of the cell and
    ``warnings`` anything the comment stripper could not resolve.
    """

    index: int
    source: str
    origin_kind: str = "code"
    removed: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "source": self.source}


def _join_source(value: Any, where: str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return "".join(value)
    raise UnsupportedFormat(f"{where}: 'source' must be a string or list of strings")


def parse_notebook(raw: bytes | str) -> Notebook:
    """Parse an nbformat v4 document.

    Raises:
        MalformedJson: ``raw`` is not a JSON object.
        UnsupportedFormat: the major format version is not 4, or a cell has
            an unknown ``cell_type``.
        MissingField: the document has no cell list, or a cell lacks
            ``cell_type`` / ``source``.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJson(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedJson("top-level JSON value is not an object")

    major = doc.get("nbformat")
    if major != 4:
        raise UnsupportedFormat(f"unsupported nbformat major version: {major!r}")
    minor = doc.get("nbformat_minor", 0)
    if not isinstance(minor, int):
        raise UnsupportedFormat(f"nbformat_minor must be an integer, got {minor!r}")

    raw_cells = doc.get("cells")
    if not isinstance(raw_cells, list):
        raise MissingField("document has no 'cells' list")

    cells = []
    for i, rc in enumerate(raw_cells):
        if not isinstance(rc, dict):
            raise MissingField(f"cell {i} is not an object")
        for key in ("cell_type", "source"):
            if key not in rc:
                raise MissingField(f"cell {i} lacks {key!r}")
        kind = rc["cell_type"]
        if kind not in CELL_KINDS:
            raise UnsupportedFormat(f"cell {i}: unknown cell_type {kind!r}")
        outputs = tuple(rc.get("outputs") or ()) if kind == "code" else ()
        cells.append(
            NotebookCell(
                index=i,
                kind=kind,
                source=_join_source(rc["source"], f"cell {i}"),
                outputs=outputs,
                metadata=rc.get("metadata") or {},
            )
        )
    return Notebook(cells=tuple(cells), format_version=(4, minor), metadata=doc.get("metadata") or {})


def serialize_notebook(nb: Notebook) -> bytes:
    """Render ``nb`` back to nbformat v4 JSON."""
    cells = []
    for cell in nb.cells:
        rc: dict[str, Any] = {"cell_type": cell.kind, "metadata": cell.metadata, "source": cell.source}
        if cell.kind == "code":
            rc["execution_count"] = None
            rc["outputs"] = list(cell.outputs)
        cells.append(rc)
    doc = {
        "cells": cells,
        "metadata": nb.metadata,
        "nbformat": nb.format_version[0],
        "nbformat_minor": nb.format_version[1],
    }
    return json.dumps(doc, indent=1, sort_keys=True).encode("utf-8")


def _strip(source: str) -> tuple[str, list[str]]:
    out: list[str] = []
    warnings: list[str] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "#":
            j = i
            while j < n and source[j] not in "\r\n":
                j += 1
            while out and len(out[-1]) == 1 and out[-1] in " \t\f":
                out.pop()
            i = j
            continue
        if ch in "'\"":
            quote = source[i : i + 3] if source.startswith(ch * 3, i) else ch
            j = i + len(quote)
            closed = False
            while j < n:
                c = source[j]
                if c == "\\":
                    j += 2
                    continue
                if source.startswith(quote, j):
                    j += len(quote)
                    closed = True
                    break
                if c == "\n" and len(quote) == 1:
                    break
                j += 1
            if not closed:
                line = source.count("\n", 0, i) + 1
                warnings.append(f"unterminated string literal at line {line}; rest passed through")
                out.append(source[i:])
                break
            out.append(source[i:j])
            i = j
            continue
        out.append(ch)
        i += 1
    return "".join(out), warnings


def strip_comments(source: str) -> str:
    """Remove ``#`` comments that sit outside string literals.

    Line structure is kept: a comment-only line becomes an empty line, and
    whitespace left dangling before a removed comment is trimmed. Source that
    does not lex cleanly is still processed; from an unterminated string
    onward the text is passed through untouched and a warning is logged.
    """
    text, warnings = _strip(source)
    for w in warnings:
        logger.warning("strip_comments: %s", w)
    return text


def _remove_magics(source: str) -> tuple[str, list[str]]:
    lines = source.splitlines(keepends=True)
    removed: list[str] = []
    first = next((ln for ln in lines if ln.strip()), "")
    if first.startswith("%%"):
        name = first[2:].split(maxsplit=1)[0] if first[2:].strip() else ""
        if name not in PYTHON_CELL_MAGICS:
            removed.append(first.rstrip("\r\n"))
            return "", removed
    kept = []
    for ln in lines:
        if _MAGIC_LINE.match(ln):
            removed.append(ln.rstrip("\r\n"))
        else:
            kept.append(ln)
    return "".join(kept), removed


def _tidy(source: str) -> str:
    return source.rstrip().lstrip("\r\n")


def clean_cells(nb: Notebook) -> list[CleanCell]:
    """Reduce every code cell of ``nb`` to plain Python.

    Magic and shell-escape lines are removed (a non-Python ``%%`` cell magic
    drops the whole body), comments are stripped, and cells left empty are
    skipped. Markdown and raw cells never produce a CleanCell.
    """
    cleaned = []
    for cell in nb.cells:
        if cell.kind != "code":
            continue
        body, removed = _remove_magics(cell.source)
        for line in removed:
            logger.info("cell %d: removed magic line %r", cell.index, line)
        text, warnings = _strip(body)
        for w in warnings:
            logger.warning("cell %d: %s", cell.index, w)
        text = _tidy(text)
        if not text.strip():
            logger.info("cell %d: empty after cleaning, dropped", cell.index)
            continue
        cleaned.append(
            CleanCell(
                index=cell.index,
                source=text,
                origin_kind=cell.kind,
                removed=tuple(removed),
                warnings=tuple(warnings),
            )
        )
    return cleaned
