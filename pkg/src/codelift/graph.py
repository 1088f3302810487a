"""Dependency graph over cleaned notebook cells.

The graph is the shared state handed from stage to stage: the architect
fills each node's ADR slot, the developer its refactored slot, and the
structure stage its definitions list.
"""

from __future__ import annotations

import json
from typing import Iterable, Iterator, Optional

from .analysis import BindingSet, Definition, check_syntax, extract_bindings
from .errors import EmptyNotebook, UnknownNode, UnparseableCells, WriteOnceViolation
from .notebook import CleanCell


class CellNode:
    """One code cell plus everything the pipeline learns about it."""

    def __init__(self, id: int, source: str, bindings: BindingSet):
        self.id = id
        self.source = source
        self.bindings = bindings
        self.parents: set[int] = set()
        self.children: set[int] = set()
        self.externals: set[str] = set()
        self.definitions: list[Definition] = []
        self._adr = None
        self._refactored: Optional[str] = None

    def __repr__(self) -> str:
        return f"CellNode(id={self.id}, parents={sorted(self.parents)})"

    @property
    def adr(self):
        return self._adr

    @adr.setter
    def adr(self, record) -> None:
        if self._adr is not None:
            raise WriteOnceViolation(f"cell {self.id}: ADR already set")
        if record is None:
            raise ValueError("ADR cannot be cleared")
        self._adr = record

    @property
    def refactored(self) -> Optional[str]:
        return self._refactored

    @refactored.setter
    def refactored(self, code: str) -> None:
        if self._refactored is not None:
            raise WriteOnceViolation(f"cell {self.id}: refactored code already set")
        if code is None:
            raise ValueError("refactored code cannot be cleared")
        self._refactored = code

    @property
    def current_code(self) -> str:
        """Refactored code when available, otherwise the cleaned source."""
        return self._refactored if self._refactored is not None else self.source


class DependencyGraph:
    def __init__(self, nodes: Iterable[CellNode] = ()):
        self.nodes: dict[int, CellNode] = {n.id: n for n in nodes}
        self.order: list[int] = sorted(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def __getitem__(self, node_id: int) -> CellNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def __iter__(self) -> Iterator[CellNode]:
        return (self.nodes[i] for i in self.order)

    def edges(self) -> list[tuple[int, int]]:
        return sorted((p, n.id) for n in self for p in n.parents)

    def to_dict(self) -> dict:
        """Full node state, used for the persisted stage artifacts."""
        out = []
        for n in self:
            out.append(
                {
                    "id": n.id,
                    "source": n.source,
                    "bindings": n.bindings.to_dict(),
                    "parents": sorted(n.parents),
                    "externals": sorted(n.externals),
                    "adr": n.adr.to_dict() if n.adr is not None else None,
                    "refactored": n.refactored,
                    "definitions": [d.to_dict() for d in n.definitions],
                }
            )
        return {"nodes": out, "edges": [list(e) for e in self.edges()]}


def build_graph(cells: list[CleanCell]) -> DependencyGraph:
    """Link each cell to the latest earlier cell defining every name it uses.

    Names with no earlier definer are kept on the node as ``externals``.

    Raises:
        EmptyNotebook: ``cells`` is empty.
        UnparseableCells: at least one cell fails :func:`check_syntax`.
    """
    if not cells:
        raise EmptyNotebook("notebook has no code cells")
    ordered = sorted(cells, key=lambda c: c.index)
    if len({c.index for c in ordered}) != len(ordered):
        raise ValueError("duplicate cell indices")

    failures = [(c.index, d) for c in ordered if (d := check_syntax(c.source)) is not None]
    if failures:
        raise UnparseableCells(failures)

    nodes = []
    latest: dict[str, int] = {}
    for cell in ordered:
        node = CellNode(cell.index, cell.source, extract_bindings(cell.source))
        for name in node.bindings.used:
            if name in latest:
                node.parents.add(latest[name])
            else:
                node.externals.add(name)
        for name in node.bindings.defined:
            latest[name] = node.id
        nodes.append(node)

    g = DependencyGraph(nodes)
    for node in g:
        for p in node.parents:
            g.nodes[p].children.add(node.id)
    return g


def ancestors(g: DependencyGraph, node_id: int) -> list[CellNode]:
    """Transitive parents of ``node_id`` in ascending id order."""
    seen: set[int] = set()
    stack = list(g[node_id].parents)
    while stack:
        p = stack.pop()
        if p not in seen:
            seen.add(p)
            stack.extend(g.nodes[p].parents)
    return [g.nodes[i] for i in sorted(seen)]


def skeleton(g: DependencyGraph) -> str:
    """One line per node: ``cell <id> [defines: ..] [uses: ..] -> parents: ..``."""
    lines = []
    for n in g:
        line = (
            f"cell {n.id} [defines: {','.join(sorted(n.bindings.defined))}] "
            f"[uses: {','.join(sorted(n.bindings.used))}] -> parents:"
        )
        if n.parents:
            line += " " + ",".join(str(p) for p in sorted(n.parents))
        lines.append(line)
    return "\n".join(lines)


def export_graph(g: DependencyGraph, format: str = "json") -> bytes:
    if format == "json":
        doc = {
            "nodes": [
                {"id": n.id, "defines": sorted(n.bindings.defined), "uses": sorted(n.bindings.used)} for n in g
            ],
            "edges": [list(e) for e in g.edges()],
        }
        return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")
    if format == "dot":
        lines = ["digraph g {"]
        for n in g:
            lines.append(f'n{n.id} [label="cell {n.id}"];')
        for p, c in g.edges():
            lines.append(f"n{p} -> n{c};")
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown export format: {format!r}")
