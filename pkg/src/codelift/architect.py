"""Architect stage: one Architecture Design Record per cell.

Per cell the stage formats a prompt (skeleton, ancestor code, current
code), asks the model for an ADR, parses the ``adr`` block and stores the
record on the node. A reply that cannot be parsed gets one corrective
retry before the cell fails.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from .errors import AdrParseError, CellFailed, CodeliftError, StageError
from .graph import DependencyGraph, ancestors, skeleton
from .llm import ChatMessage, fenced_blocks, system, user
from .prompts import prompt

logger = logging.getLogger(__name__)

CATEGORIES = ("modularization", "naming", "dry", "separation", "other")


@dataclass(frozen=True)
class ArchDecision:
    title: str
    description: str
    parent_refs: tuple[int, ...] = ()
    category: str = "other"

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "description": self.description,
            "parent_refs": list(self.parent_refs),
            "category": self.category,
        }


@dataclass(frozen=True)
class AdrRecord:
    cell_id: int
    decisions: tuple[ArchDecision, ...]
    raw_text: str
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {"cell_id": self.cell_id, "decisions": [d.to_dict() for d in self.decisions]}


def code_block(label: str, code: str) -> str:
    return f"### {label}\n```python\n{code}\n```"


def format_architect_prompt(g: DependencyGraph, node_id: int) -> list[ChatMessage]:
    node = g[node_id]
    parts = ["## Dependency skeleton", skeleton(g)]
    for anc in ancestors(g, node_id):
        parts.append(code_block(f"cell {anc.id}", anc.source))
    parts.append(code_block(f"current cell {node.id}", node.source))
    return [system(prompt("architect_system")), user("\n\n".join(parts))]


def parse_adr(raw: str, cell_id: int, g: DependencyGraph) -> AdrRecord:
    """Parse the last ``adr`` block of a model reply.

    Parent references that are not ancestors of ``cell_id`` are dropped and
    unknown categories become ``other``; both leave a warning on the record.
    """
    allowed = {a.id for a in ancestors(g, cell_id)}
    blocks = [body for tag, body in fenced_blocks(raw) if tag == "adr"]
    if not blocks:
        raise AdrParseError("no ```adr block found")
    try:
        doc = json.loads(blocks[-1])
    except json.JSONDecodeError as exc:
        raise AdrParseError(f"adr block is not valid JSON: {exc}") from exc
    items = doc.get("decisions") if isinstance(doc, dict) else None
    if not isinstance(items, list):
        raise AdrParseError("adr block has no 'decisions' list")

    warnings: list[str] = []
    decisions = []
    for k, item in enumerate(items):
        if not isinstance(item, dict) or not str(item.get("title") or "").strip():
            warnings.append(f"decision {k} has no title; dropped")
            continue
        refs = []
        for ref in item.get("parent_refs") or []:
            if isinstance(ref, int) and not isinstance(ref, bool) and ref in allowed:
                refs.append(ref)
            else:
                warnings.append(f"decision {k}: parent ref {ref!r} is not an ancestor of cell {cell_id}; dropped")
        category = str(item.get("category") or "other").strip().lower()
        if category not in CATEGORIES:
            warnings.append(f"decision {k}: unknown category {category!r} mapped to 'other'")
            category = "other"
        decisions.append(
            ArchDecision(
                title=str(item["title"]).strip(),
                description=str(item.get("description") or "").strip(),
                parent_refs=tuple(refs),
                category=category,
            )
        )
    if not decisions:
        raise AdrParseError("adr block contains no usable decisions")
    for w in warnings:
        logger.warning("cell %d: %s", cell_id, w)
    return AdrRecord(cell_id, tuple(decisions), raw, tuple(warnings))


def run_architect(g: DependencyGraph, backend, transcripts: Optional[dict] = None) -> DependencyGraph:
    """Attach an ADR to every node, visiting nodes in ascending id order."""
    if any(n.adr is not None for n in g):
        raise StageError("architect stage expects a graph without ADRs")
    for node in g:
        messages = format_architect_prompt(g, node.id)
        try:
            reply = backend.complete(messages, [])
            messages.append(reply)
            try:
                record = parse_adr(reply.content, node.id, g)
            except AdrParseError as exc:
                logger.info("cell %d: ADR unparseable (%s), retrying once", node.id, exc)
                messages.append(user(prompt("architect_retry", error=str(exc))))
                reply = backend.complete(messages, [])
                messages.append(reply)
                record = parse_adr(reply.content, node.id, g)
        except CodeliftError as exc:
            raise CellFailed(node.id, exc) from exc
        finally:
            if transcripts is not None:
                transcripts[f"architect_cell_{node.id}"] = list(messages)
        node.adr = record
    return g
