"""Structure stage: lay out the refactored cells as a multi-file code base.

The stage extracts top-level definitions, asks the model for a file plan,
lets it populate the files through sandboxed tools, and finally runs an
enforcement pass. That pass is authoritative: it replaces files that do
not compile, keeps one copy of every function and class, restores missing
definitions and adds the imports files need from each other.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import posixpath
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .analysis import (
    BUILTIN_NAMES,
    Definition,
    LintConfig,
    check_syntax,
    extract_bindings,
    extract_definitions,
)
from .developer import validation_tool
from .errors import NotFound, RoundLimitExceeded, SandboxViolation, StageError, UnknownNode, WorkspaceNotEmpty
from .graph import DependencyGraph, skeleton
from .llm import ChatMessage, Tool, fenced_blocks, run_tool_loop, system, user
from .prompts import prompt

logger = logging.getLogger(__name__)

RESERVED_PREFIX = ".codelift-"
MANIFEST_NAME = ".codelift-manifest.json"
DEFAULT_ROOT = "app"


# --------------------------------------------------------------------------
# definitions


def extract_all_definitions(g: DependencyGraph) -> dict[int, list[Definition]]:
    """Top-level functions/classes of every node's refactored code."""
    out = {}
    for node in g:
        if node.refactored is None:
            raise StageError(f"cell {node.id} has no refactored code")
        try:
            defs = extract_definitions(node.refactored)
        except SyntaxError as exc:
            raise SyntaxError(f"cell {node.id}: {exc.msg}") from exc
        node.definitions = defs
        out[node.id] = defs
    return out


# --------------------------------------------------------------------------
# file plan


@dataclass(frozen=True)
class PlanEntry:
    purpose: str
    cell_ids: tuple[int, ...]
    exports: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"purpose": self.purpose, "cell_ids": list(self.cell_ids), "exports": list(self.exports)}


@dataclass
class FilePlan:
    entries: dict[str, PlanEntry]
    root_module_name: str = DEFAULT_ROOT

    def to_dict(self) -> dict:
        return {
            "root_module_name": self.root_module_name,
            "entries": {p: self.entries[p].to_dict() for p in sorted(self.entries)},
        }

    def problems(self, g: DependencyGraph) -> list[str]:
        found = []
        covered = set()
        for path, entry in self.entries.items():
            if not entry.cell_ids:
                found.append(f"{path}: no cell ids")
            covered.update(entry.cell_ids)
        missing = sorted(set(g.order) - covered)
        if missing:
            found.append(f"cells without a file: {missing}")
        if not self.entries:
            found.append("plan has no entries")
        return found

    def home(self, cell_id: int) -> Optional[str]:
        """The file holding a cell's code.

        Package markers and ``main.py`` runners only hold code when no other
        file claims the cell.
        """
        listed = [p for p in sorted(self.entries) if cell_id in self.entries[p].cell_ids]
        regular = [p for p in listed if posixpath.basename(p) not in ("__init__.py", "main.py")]
        return (regular or listed or [None])[0]


def normalize_plan_path(path) -> Optional[str]:
    """Canonical relative path, or ``None`` if the path is not acceptable."""
    if not isinstance(path, str) or not path or "\\" in path or "\x00" in path:
        return None
    if path.startswith("/") or path.startswith("~"):
        return None
    parts = path.split("/")
    if ".." in parts:
        return None
    norm = posixpath.normpath(path)
    if norm in (".", "") or not norm.endswith(".py"):
        return None
    pieces = norm.split("/")
    pieces[-1] = pieces[-1][:-3]
    if not all(p.isidentifier() for p in pieces):
        return None
    return norm


def sanitize_plan(doc, g: DependencyGraph) -> tuple[Optional[FilePlan], list[str]]:
    warnings: list[str] = []
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), dict):
        return None, ["plan is not an object with an 'entries' map"]
    root = doc.get("root_module_name")
    if not isinstance(root, str) or not root.isidentifier():
        warnings.append(f"invalid root_module_name {root!r}; using {DEFAULT_ROOT!r}")
        root = DEFAULT_ROOT
    entries: dict[str, PlanEntry] = {}
    for raw_path, raw in doc["entries"].items():
        path = normalize_plan_path(raw_path)
        if path is None:
            warnings.append(f"dropped unsafe or invalid path {raw_path!r}")
            continue
        if not isinstance(raw, dict):
            warnings.append(f"dropped {raw_path!r}: entry is not an object")
            continue
        ids = []
        for cid in raw.get("cell_ids") or []:
            if isinstance(cid, int) and not isinstance(cid, bool) and cid in g:
                if cid not in ids:
                    ids.append(cid)
            else:
                warnings.append(f"{path}: unknown cell id {cid!r} dropped")
        if not ids:
            warnings.append(f"dropped {path!r}: no valid cell ids")
            continue
        exports = tuple(str(e) for e in raw.get("exports") or [] if isinstance(e, str) and e.isidentifier())
        if path in entries:
            prev = entries[path]
            ids = list(prev.cell_ids) + [i for i in ids if i not in prev.cell_ids]
            exports = prev.exports + tuple(e for e in exports if e not in prev.exports)
        entries[path] = PlanEntry(str(raw.get("purpose") or ""), tuple(sorted(ids)), exports)
    return FilePlan(entries, root), warnings


def fallback_plan(g: DependencyGraph, root_module_name: str = DEFAULT_ROOT) -> FilePlan:
    """One module per cell, a package marker and a ``main.py`` runner."""
    if not len(g):
        raise StageError("cannot plan files for an empty graph")
    base = f"src/{root_module_name}"
    all_ids = tuple(g.order)
    entries = {
        f"{base}/__init__.py": PlanEntry(f"Package {root_module_name}", all_ids),
        f"{base}/main.py": PlanEntry("Runs the cell modules in notebook order", all_ids),
    }
    for node in g:
        exports = tuple(sorted(extract_bindings(node.current_code).defined))
        entries[f"{base}/cells/cell_{node.id}.py"] = PlanEntry(f"Code of notebook cell {node.id}", (node.id,), exports)
    return FilePlan(entries, root_module_name)


def _definitions_summary(g: DependencyGraph, defs: dict[int, list[Definition]]) -> str:
    lines = []
    for node in g:
        items = [f"{d.kind} {d.name} (lines {d.line_span[0]}-{d.line_span[1]})" for d in defs.get(node.id, [])]
        names = ",".join(sorted(extract_bindings(node.current_code).defined))
        lines.append(f"cell {node.id}: " + ("; ".join(items) if items else "no functions or classes") + f" | defines: {names}")
    return "\n".join(lines)


def format_plan_prompt(g: DependencyGraph, defs: dict[int, list[Definition]]) -> list[ChatMessage]:
    body = "## Dependency skeleton\n" + skeleton(g) + "\n\n## Definitions per cell\n" + _definitions_summary(g, defs)
    return [system(prompt("fileplan_system")), user(body)]


def propose_file_plan(
    backend,
    g: DependencyGraph,
    defs: dict[int, list[Definition]],
    root_module_name: str = DEFAULT_ROOT,
    transcripts: Optional[dict] = None,
    warnings: Optional[list] = None,
) -> FilePlan:
    """Ask the model for a file plan; fall back to :func:`fallback_plan` if unusable."""
    messages = format_plan_prompt(g, defs)
    reply = backend.complete(list(messages), [])
    messages.append(reply)
    if transcripts is not None:
        transcripts["structure_plan"] = messages

    notes: list[str] = []
    plan = None
    blocks = [body for tag, body in fenced_blocks(reply.content) if tag == "fileplan"]
    if not blocks:
        notes.append("no ```fileplan block in reply")
    else:
        try:
            plan, notes = sanitize_plan(json.loads(blocks[-1]), g)
        except json.JSONDecodeError as exc:
            notes.append(f"fileplan block is not valid JSON: {exc}")
    if plan is not None:
        problems = plan.problems(g)
        if problems:
            notes += problems
            plan = None
    for n in notes:
        logger.warning("file plan: %s", n)
    if warnings is not None:
        warnings.extend(notes)
    if plan is None:
        logger.warning("file plan unusable, using the fallback layout")
        return fallback_plan(g, root_module_name)
    return plan


# --------------------------------------------------------------------------
# sandbox


class Sandbox:
    """File access confined to one directory.

    Paths are relative with ``/`` separators; absolute paths, ``..``
    segments, backslashes and anything resolving outside the root
    (including through symlinks) raise :class:`SandboxViolation`.
    """

    def __init__(self, root):
        self.root = Path(os.path.realpath(root))

    def resolve(self, path, allow_root: bool = False) -> Path:
        if not isinstance(path, str):
            raise SandboxViolation(f"path must be a string, got {type(path).__name__}")
        if path in ("", ".") and allow_root:
            return self.root
        if not path or "\x00" in path or "\\" in path:
            raise SandboxViolation(f"invalid path {path!r}")
        if path.startswith("/") or path.startswith("~") or os.path.isabs(path):
            raise SandboxViolation(f"absolute paths are not allowed: {path!r}")
        parts = [p for p in path.split("/") if p not in ("", ".")]
        if ".." in parts:
            raise SandboxViolation(f"'..' is not allowed: {path!r}")
        if not parts:
            if allow_root:
                return self.root
            raise SandboxViolation(f"invalid path {path!r}")
        if any(p.startswith(RESERVED_PREFIX) for p in parts):
            raise SandboxViolation(f"reserved path {path!r}")
        target = self.root.joinpath(*parts)
        real = Path(os.path.realpath(target))
        if real != self.root and self.root not in real.parents:
            raise SandboxViolation(f"path escapes the workspace: {path!r}")
        return target

    def write_file(self, path: str, content: str) -> str:
        if not isinstance(content, str):
            raise ValueError("content must be a string")
        target = self.resolve(path)
        if target.is_dir():
            raise SandboxViolation(f"{path!r} is a directory")
        target.parent.mkdir(parents=True, exist_ok=True)
        # re-check after mkdir: a component may have been a symlink
        self.resolve(path)
        target.write_bytes(content.encode("utf-8"))
        return f"wrote {len(content.encode('utf-8'))} bytes to {path}"

    def read_file(self, path: str) -> str:
        target = self.resolve(path)
        if not target.is_file():
            raise NotFound(f"no such file: {path}")
        return target.read_bytes().decode("utf-8")

    def list_directory(self, path: str = ".") -> list[str]:
        target = self.resolve(path, allow_root=True)
        if not target.is_dir():
            raise NotFound(f"no such directory: {path}")
        names = []
        for child in target.iterdir():
            if child.name.startswith(RESERVED_PREFIX):
                continue
            names.append(child.name + "/" if child.is_dir() else child.name)
        return sorted(names)

    def mkdir(self, path: str) -> None:
        self.resolve(path).mkdir(parents=True, exist_ok=True)
        self.resolve(path)

    def files(self) -> list[str]:
        """Relative paths of every regular file, reserved entries excluded."""
        out = []
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames[:] = sorted(d for d in dirnames if not d.startswith(RESERVED_PREFIX))
            rel = os.path.relpath(dirpath, self.root)
            for name in filenames:
                if name.startswith(RESERVED_PREFIX):
                    continue
                out.append(name if rel == "." else f"{rel}/{name}".replace(os.sep, "/"))
        return sorted(out)


def sandbox_tools(box: Sandbox, g: DependencyGraph, log: Optional[list] = None, lint=None) -> dict[str, Tool]:
    """The population tool set; every invocation is appended to ``log``."""

    def fetch_code(node_id) -> str:
        try:
            node = g[node_id]
        except UnknownNode:
            raise NotFound(f"no cell {node_id!r}") from None
        return node.current_code

    def logged(name, fn, key):
        def run(**kwargs):
            entry = {"tool": name, "target": kwargs.get(key) if key else None}
            try:
                result = fn(**kwargs)
            except Exception as exc:
                entry["error"] = type(exc).__name__
                raise
            finally:
                if log is not None:
                    log.append(entry)
            return result

        return run

    def schema(props: dict, required: list) -> dict:
        return {"type": "object", "properties": props, "required": required}

    string = {"type": "string"}
    tools = {
        "write_file": Tool(
            "write_file",
            logged("write_file", box.write_file, "path"),
            "Write a UTF-8 text file (parent directories are created).",
            schema({"path": string, "content": string}, ["path", "content"]),
        ),
        "read_file": Tool(
            "read_file", logged("read_file", box.read_file, "path"), "Read a text file.", schema({"path": string}, ["path"])
        ),
        "list_directory": Tool(
            "list_directory",
            logged("list_directory", box.list_directory, "path"),
            "List a directory; sub-directories end with '/'.",
            schema({"path": string}, []),
        ),
        "fetch_code": Tool(
            "fetch_code",
            logged("fetch_code", fetch_code, "node_id"),
            "Return the refactored code of a notebook cell.",
            schema({"node_id": {"type": "integer"}}, ["node_id"]),
        ),
    }
    validation = validation_tool(lint)
    tools["validation"] = Tool("validation", logged("validation", validation.fn, None), validation.description, validation.parameters)
    return tools


# --------------------------------------------------------------------------
# source rewriting helpers


def module_name(path: str) -> str:
    """Dotted import path of a planned file (``src/`` is the source root)."""
    parts = path[:-3].split("/") if path.endswith(".py") else path.split("/")
    if parts and parts[0] == "src":
        parts = parts[1:]
    if parts and parts[-1] == "__init__":
        parts = parts[:-1]
    return ".".join(parts)


def _render_import(node, alias) -> tuple[str, str]:
    if isinstance(node, ast.Import):
        bound = alias.asname or alias.name.split(".")[0]
        text = f"import {alias.name}" + (f" as {alias.asname}" if alias.asname else "")
    else:
        bound = alias.asname or alias.name
        module = "." * node.level + (node.module or "")
        text = f"from {module} import {alias.name}" + (f" as {alias.asname}" if alias.asname else "")
    return bound, text


def _import_bindings(tree: ast.Module) -> dict[str, str]:
    found: dict[str, str] = {}
    for node in tree.body:
        if isinstance(node, (ast.Import, ast.ImportFrom)):
            if isinstance(node, ast.ImportFrom) and node.module == "__future__":
                continue
            for alias in node.names:
                if alias.name == "*":
                    continue
                bound, text = _render_import(node, alias)
                found.setdefault(bound, text)
    return found


def _header_end(tree: ast.Module) -> int:
    """Line after the module docstring and ``__future__`` imports."""
    end = 0
    for i, node in enumerate(tree.body):
        is_doc = i == 0 and isinstance(node, ast.Expr) and isinstance(node.value, ast.Constant) and isinstance(node.value.value, str)
        is_future = isinstance(node, ast.ImportFrom) and node.module == "__future__"
        if is_doc or is_future:
            end = node.end_lineno
        else:
            break
    return end


def _is_import_line(line: str) -> bool:
    return line.startswith(("import ", "from "))


def insert_imports(source: str, statements: list[str]) -> str:
    present = set(source.splitlines())
    new = [s for s in statements if s not in present]
    if not new:
        return source
    lines = source.splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        lines[-1] += "\n"
    at = _header_end(ast.parse(source))
    block = [s + "\n" for s in new]
    if at < len(lines) and lines[at].strip() and not _is_import_line(lines[at]):
        block.append("\n")
    return "".join(lines[:at] + block + lines[at:])


def hoist_future_imports(chunks: list[str]) -> tuple[list[str], list[str]]:
    """Pull ``from __future__`` imports out of code chunks."""
    futures: list[str] = []
    cleaned = []
    for chunk in chunks:
        tree = ast.parse(chunk)
        lines = chunk.splitlines(keepends=True)
        drop = set()
        for node in tree.body:
            if isinstance(node, ast.ImportFrom) and node.module == "__future__":
                for alias in node.names:
                    stmt = f"from __future__ import {alias.name}"
                    if stmt not in futures:
                        futures.append(stmt)
                drop.update(range(node.lineno - 1, node.end_lineno))
        cleaned.append("".join(ln for i, ln in enumerate(lines) if i not in drop).strip("\n"))
    return futures, cleaned


def _file_cells(plan: FilePlan, g: DependencyGraph) -> dict[str, list[int]]:
    homes: dict[str, list[int]] = {p: [] for p in plan.entries}
    for node in g:
        home = plan.home(node.id)
        if home is not None:
            homes[home].append(node.id)
    return homes


def _runner(plan: FilePlan, path: str, homes: dict[str, list[int]]) -> str:
    order = []
    for cid in sorted(plan.entries[path].cell_ids):
        target = plan.home(cid)
        if target and target != path and posixpath.basename(target) != "main.py":
            mod = module_name(target)
            if mod not in order:
                order.append(mod)
    listing = "".join(f'    "{m}",\n' for m in order)
    return (
        '"""Runs the notebook code in its original order."""\n'
        "import importlib\n\n"
        f"MODULES = [\n{listing}]\n\n\n"
        "def main():\n"
        "    for name in MODULES:\n"
        "        importlib.import_module(name)\n\n\n"
        'if __name__ == "__main__":\n'
        "    main()\n"
    )


def fallback_file(plan: FilePlan, path: str, g: DependencyGraph, homes: dict[str, list[int]]) -> str:
    """Content of one planned file built straight from the graph, before import fixing."""
    entry = plan.entries[path]
    cells = homes.get(path, [])
    if not cells:
        if posixpath.basename(path) == "main.py":
            return _runner(plan, path, homes)
        return f'"""{entry.purpose or "Package marker."}"""\n'
    futures, chunks = hoist_future_imports([g[c].current_code for c in cells])
    parts = []
    if futures:
        parts.append("\n".join(futures))
    parts += [c for c in chunks if c.strip()]
    return "\n\n\n".join(parts) + "\n"


def _own_names(tree: ast.Module, source: str) -> set[str]:
    return set(extract_bindings(source).defined) - set(_import_bindings(tree))


def _definer_home(name: str, before: int, node_defined: dict[int, frozenset], plan: FilePlan) -> Optional[str]:
    earlier = [cid for cid, names in node_defined.items() if cid < before and name in names]
    return plan.home(max(earlier)) if earlier else None


def fix_imports(files: dict[str, str], g: DependencyGraph, plan: FilePlan) -> tuple[dict[str, str], list[dict]]:
    """Add imports for names a file uses but another emitted file provides."""
    sources = {p: s for p, s in files.items() if p.endswith(".py")}
    trees = {p: ast.parse(s) for p, s in sources.items()}
    own = {p: _own_names(trees[p], sources[p]) for p in sources}
    imported = {p: _import_bindings(trees[p]) for p in sources}
    homes = _file_cells(plan, g)
    node_defined = {n.id: extract_bindings(n.current_code).defined for n in g}
    out = dict(files)
    events = []
    for path in sorted(sources):
        bindings = extract_bindings(sources[path])
        wanted = []
        for name in sorted(bindings.used - bindings.defined):
            providers = [p for p in sorted(sources) if p != path and name in own[p] and posixpath.basename(p) != "main.py"]
            if providers:
                choice = providers[0]
                cells = homes.get(path) or []
                if cells and len(providers) > 1:
                    preferred = _definer_home(name, max(cells), node_defined, plan)
                    if preferred in providers:
                        choice = preferred
                wanted.append(f"from {module_name(choice)} import {name}")
                continue
            if name in BUILTIN_NAMES:
                continue
            stmts = [imported[p][name] for p in sorted(sources) if p != path and name in imported[p]]
            if stmts and not stmts[0].startswith("from ."):
                wanted.append(stmts[0])
        if wanted:
            updated = insert_imports(sources[path], sorted(set(wanted)))
            if updated != sources[path]:
                out[path] = updated
                events.append({"action": "add_imports", "path": path, "imports": sorted(set(wanted))})
    return out, events


def dedupe_definitions(files: dict[str, str], names: set[str]) -> tuple[dict[str, str], list[dict]]:
    """Keep the first top-level definition of each name; later copies become imports."""
    out = dict(files)
    events = []
    first: dict[str, str] = {}
    for path in sorted(p for p in files if p.endswith(".py")):
        source = out[path]
        remove: list[Definition] = []
        imports = []
        for d in extract_definitions(source):
            if d.name not in names:
                continue
            if d.name in first:
                remove.append(d)
                if first[d.name] != path:
                    imports.append(f"from {module_name(first[d.name])} import {d.name}")
            else:
                first[d.name] = path
        if not remove:
            continue
        lines = source.splitlines(keepends=True)
        for d in sorted(remove, key=lambda d: d.line_span[0], reverse=True):
            del lines[d.line_span[0] - 1 : d.line_span[1]]
        source = "".join(lines)
        if imports:
            source = insert_imports(source, sorted(set(imports)))
        out[path] = source
        events.append(
            {"action": "dedupe", "path": path, "removed": [d.name for d in remove], "imports": sorted(set(imports))}
        )
    return out, events


def render_fallback_repo(g: DependencyGraph, plan: FilePlan) -> dict[str, str]:
    """Deterministic contents for every planned file, imports included."""
    homes = _file_cells(plan, g)
    files = {p: fallback_file(plan, p, g, homes) for p in sorted(plan.entries)}
    names = {d.name for node in g for d in extract_definitions(node.current_code)}
    files, _ = dedupe_definitions(files, names)
    files, _ = fix_imports(files, g, plan)
    return files


# --------------------------------------------------------------------------
# population + enforcement


@dataclass
class EmittedRepo:
    root: Path
    manifest: list[tuple[str, int, str]]
    log: list[dict] = field(default_factory=list)
    enforcement: list[dict] = field(default_factory=list)

    @property
    def substitutions(self) -> int:
        return sum(1 for e in self.enforcement if e["action"] in ("fallback_content", "missing_file", "removed_invalid"))

    def manifest_json(self) -> str:
        doc = {
            "files": [{"path": p, "bytes": n, "sha256": h} for p, n, h in self.manifest],
            "enforcement": self.enforcement,
            "tool_log": self.log,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def build_manifest(box: Sandbox) -> list[tuple[str, int, str]]:
    entries = []
    for rel in box.files():
        data = (box.root / rel).read_bytes()
        entries.append((rel, len(data), hashlib.sha256(data).hexdigest()))
    return entries


def _check_empty(root: Path) -> None:
    if root.exists():
        if not root.is_dir():
            raise WorkspaceNotEmpty(f"{root} is not a directory")
        extra = [p.name for p in root.iterdir() if not p.name.startswith(RESERVED_PREFIX)]
        if extra:
            raise WorkspaceNotEmpty(f"{root} is not empty: {sorted(extra)[:5]}")
    else:
        root.mkdir(parents=True)


def enforce(box: Sandbox, g: DependencyGraph, plan: FilePlan, defs: dict[int, list[Definition]]) -> list[dict]:
    """Repair the populated workspace in place and return what was changed."""
    events: list[dict] = []
    fallback = render_fallback_repo(g, plan)

    for path in sorted(plan.entries):
        target = box.root / path
        if not target.is_file():
            box.write_file(path, fallback[path])
            events.append({"action": "missing_file", "path": path})

    files = {p: box.read_file(p) for p in box.files() if p.endswith(".py")}
    for path in sorted(files):
        diag = check_syntax(files[path])
        if diag is None:
            continue
        if path in plan.entries:
            files[path] = fallback[path]
            events.append({"action": "fallback_content", "path": path, "reason": str(diag)})
        else:
            (box.root / path).unlink()
            del files[path]
            events.append({"action": "removed_invalid", "path": path, "reason": str(diag)})

    names = {d.name for ds in defs.values() for d in ds}
    files, dedupe_events = dedupe_definitions(files, names)
    events += dedupe_events

    present = set()
    for source in files.values():
        present |= {d.name for d in extract_definitions(source)}
    for node in g:
        for d in defs.get(node.id, []):
            if d.name in present:
                continue
            home = plan.home(node.id)
            files[home] = files[home].rstrip("\n") + "\n\n\n" + d.source_slice.rstrip("\n") + "\n"
            present.add(d.name)
            events.append({"action": "restore_definition", "path": home, "name": d.name})

    files, import_events = fix_imports(files, g, plan)
    events += import_events

    for path, source in files.items():
        if box.read_file(path) != source:
            box.write_file(path, source)
    # a repair must never leave a file that does not compile
    for path in sorted(files):
        diag = check_syntax(files[path])
        if diag is not None and path in fallback:
            box.write_file(path, fallback[path])
            events.append({"action": "fallback_content", "path": path, "reason": str(diag)})
    for e in events:
        logger.info("enforcement: %s", e)
    return events


def format_population_prompt(g: DependencyGraph, plan: FilePlan) -> list[ChatMessage]:
    lines = [f"Root package: {plan.root_module_name}", "", "## File plan"]
    for path in sorted(plan.entries):
        e = plan.entries[path]
        lines.append(
            f"- {path}: {e.purpose or '(no purpose given)'}; cells {list(e.cell_ids)}; exports {list(e.exports)}"
        )
    lines += ["", "## Dependency skeleton", skeleton(g)]
    return [system(prompt("population_system")), user("\n".join(lines))]


def populate_files(
    backend,
    g: DependencyGraph,
    plan: FilePlan,
    workspace,
    defs: Optional[dict[int, list[Definition]]] = None,
    lint: Optional[LintConfig] = None,
    max_rounds: int = 12,
    transcripts: Optional[dict] = None,
) -> EmittedRepo:
    """Let the model write the planned files, then enforce the invariants.

    Entries whose name starts with ``.codelift-`` are reserved for stage
    artifacts and ignored by the emptiness check.
    """
    root = Path(workspace)
    _check_empty(root)
    box = Sandbox(root)
    if defs is None:
        defs = {n.id: extract_definitions(n.current_code) for n in g}

    for path in sorted(plan.entries):
        parent = posixpath.dirname(path)
        if parent:
            box.mkdir(parent)

    log: list[dict] = []
    tools = sandbox_tools(box, g, log, lint)
    messages = format_population_prompt(g, plan)
    try:
        _, messages = run_tool_loop(backend, messages, tools, max_rounds)
    except RoundLimitExceeded as exc:
        messages = exc.transcript
        logger.warning("population loop hit the round limit (%d)", max_rounds)
        log.append({"tool": "(loop)", "target": None, "error": "RoundLimitExceeded"})
    finally:
        if transcripts is not None:
            transcripts["structure_population"] = messages

    events = enforce(box, g, plan, defs)
    repo = EmittedRepo(root=box.root, manifest=build_manifest(box), log=log, enforcement=events)
    (box.root / MANIFEST_NAME).write_text(repo.manifest_json(), encoding="utf-8")
    return repo


def run_structure(
    g: DependencyGraph,
    backend,
    workspace,
    root_module_name: str = DEFAULT_ROOT,
    lint: Optional[LintConfig] = None,
    max_rounds: int = 12,
    transcripts: Optional[dict] = None,
    plan_warnings: Optional[list] = None,
) -> tuple[FilePlan, EmittedRepo]:
    defs = extract_all_definitions(g)
    plan = propose_file_plan(backend, g, defs, root_module_name, transcripts, plan_warnings)
    repo = populate_files(backend, g, plan, workspace, defs, lint, max_rounds, transcripts)
    return plan, repo
