"""Static analysis of notebook code.

Covers name-level def/use extraction, listing of top-level definitions,
syntax checking, and the lint adapter that produces a 0-10 quality score.
"""

from __future__ import annotations

import ast
import builtins
import logging
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Union

from .errors import LinterUnavailable

logger = logging.getLogger(__name__)

BUILTIN_NAMES = frozenset(n for n in dir(builtins) if not n.startswith("_"))

LONG_LINE_LIMIT = 120
UNUSED_IMPORT_PENALTY = Fraction(1, 2)
LONG_LINE_PENALTY = Fraction(1, 10)
SHADOWED_BUILTIN_PENALTY = Fraction(1, 2)
MAX_SCORE = Fraction(10)

DEFAULT_PYLINT_CMD = "pylint --persistent=n --score=y"


# --------------------------------------------------------------------------
# def/use


@dataclass(frozen=True)
class BindingSet:
    defined: frozenset[str]
    used: frozenset[str]
    imports: frozenset[tuple[str, str]] = frozenset()

    def to_dict(self) -> dict:
        return {
            "defined": sorted(self.defined),
            "used": sorted(self.used),
            "imports": sorted(list(p) for p in self.imports),
        }


def _arg_names(args: ast.arguments) -> set[str]:
    every = args.posonlyargs + args.args + args.kwonlyargs
    names = {a.arg for a in every}
    if args.vararg:
        names.add(args.vararg.arg)
    if args.kwarg:
        names.add(args.kwarg.arg)
    return names


def _signature_parts(node) -> list[ast.AST]:
    """Expressions of a def/lambda that are evaluated in the enclosing scope."""
    args = node.args
    parts: list[ast.AST] = list(args.defaults) + [d for d in args.kw_defaults if d is not None]
    if not isinstance(node, ast.Lambda):
        parts += list(node.decorator_list)
        every = args.posonlyargs + args.args + args.kwonlyargs + [a for a in (args.vararg, args.kwarg) if a]
        parts += [a.annotation for a in every if a.annotation is not None]
        if node.returns is not None:
            parts.append(node.returns)
    return parts


class _ScopeCollector(ast.NodeVisitor):
    """Order-insensitive collection of bindings and reads inside one scope."""

    def __init__(self):
        self.bound: set[str] = set()
        self.loads: set[str] = set()
        self.declared: set[str] = set()
        self.inner_now: set[str] = set()
        self.inner_later: set[str] = set()

    @property
    def locals(self) -> set[str]:
        return self.bound - self.declared

    def visit_Name(self, node):
        if isinstance(node.ctx, ast.Load):
            self.loads.add(node.id)
        else:
            self.bound.add(node.id)

    def visit_Global(self, node):
        self.declared.update(node.names)

    visit_Nonlocal = visit_Global

    def visit_Import(self, node):
        for alias in node.names:
            self.bound.add(alias.asname or alias.name.split(".")[0])

    def visit_ImportFrom(self, node):
        for alias in node.names:
            if alias.name != "*":
                self.bound.add(alias.asname or alias.name)

    def visit_ExceptHandler(self, node):
        if node.name:
            self.bound.add(node.name)
        self.generic_visit(node)

    def visit_MatchAs(self, node):
        if node.name:
            self.bound.add(node.name)
        self.generic_visit(node)

    def visit_MatchStar(self, node):
        if node.name:
            self.bound.add(node.name)

    def visit_MatchMapping(self, node):
        if node.rest:
            self.bound.add(node.rest)
        self.generic_visit(node)

    def visit_FunctionDef(self, node):
        self.bound.add(node.name)
        for part in _signature_parts(node):
            self.visit(part)
        self.inner_later |= _function_free(node)

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_Lambda(self, node):
        for part in _signature_parts(node):
            self.visit(part)
        self.inner_later |= _function_free(node)

    def visit_ClassDef(self, node):
        self.bound.add(node.name)
        for part in node.decorator_list + node.bases + [k.value for k in node.keywords]:
            self.visit(part)
        now, later = _class_free(node)
        self.inner_now |= now
        self.inner_later |= later

    def _comprehension(self, node):
        self.visit(node.generators[0].iter)
        self.inner_now |= _comprehension_free(node)

    visit_ListComp = visit_SetComp = visit_GeneratorExp = visit_DictComp = _comprehension


def _function_free(node) -> set[str]:
    c = _ScopeCollector()
    c.bound |= _arg_names(node.args)
    body = node.body if isinstance(node.body, list) else [node.body]
    for stmt in body:
        c.visit(stmt)
    return (c.loads | c.inner_now | c.inner_later) - c.locals


def _class_free(node: ast.ClassDef) -> tuple[set[str], set[str]]:
    # Methods do not see class-level names, so their free names pass through.
    c = _ScopeCollector()
    for stmt in node.body:
        c.visit(stmt)
    return (c.loads | c.inner_now) - c.locals, set(c.inner_later)


def _comprehension_free(node) -> set[str]:
    c = _ScopeCollector()
    for i, gen in enumerate(node.generators):
        c.visit(gen.target)
        if i:
            c.visit(gen.iter)
        for cond in gen.ifs:
            c.visit(cond)
    if isinstance(node, ast.DictComp):
        c.visit(node.key)
        c.visit(node.value)
    else:
        c.visit(node.elt)
    return (c.loads | c.inner_now | c.inner_later) - c.locals


class _ModuleWalker(ast.NodeVisitor):
    """Walks module-level code in execution order.

    Reads at module level count as uses only when no earlier statement of
    the same cell bound the name. Reads inside function bodies happen at
    call time, so they are checked against everything the cell defines.
    """

    def __init__(self):
        self.bound: set[str] = set()
        self.defined: set[str] = set()
        self.used: set[str] = set()
        self.deferred: set[str] = set()
        self.imports: set[tuple[str, str]] = set()

    def _load(self, name: str) -> None:
        if name not in self.bound:
            self.used.add(name)

    def _store(self, name: str) -> None:
        self.bound.add(name)
        self.defined.add(name)

    def visit_Name(self, node):
        if isinstance(node.ctx, ast.Store):
            self._store(node.id)
        else:
            self._load(node.id)

    def visit_Assign(self, node):
        self.visit(node.value)
        for target in node.targets:
            self.visit(target)

    def visit_AugAssign(self, node):
        if isinstance(node.target, ast.Name):
            self._load(node.target.id)
            self.visit(node.value)
            self._store(node.target.id)
        else:
            self.visit(node.target)
            self.visit(node.value)

    def visit_AnnAssign(self, node):
        self.visit(node.annotation)
        if node.value is not None:
            self.visit(node.value)
            self.visit(node.target)
        elif not isinstance(node.target, ast.Name):
            self.visit(node.target)

    def visit_NamedExpr(self, node):
        self.visit(node.value)
        self.visit(node.target)

    def visit_For(self, node):
        self.visit(node.iter)
        self.visit(node.target)
        for stmt in node.body + node.orelse:
            self.visit(stmt)

    visit_AsyncFor = visit_For

    def visit_Import(self, node):
        for alias in node.names:
            bound = alias.asname or alias.name.split(".")[0]
            self._store(bound)
            self.imports.add((alias.name, bound))

    def visit_ImportFrom(self, node):
        module = "." * node.level + (node.module or "")
        for alias in node.names:
            if alias.name == "*":
                continue
            bound = alias.asname or alias.name
            self._store(bound)
            sep = "" if module.endswith(".") or not module else "."
            self.imports.add((f"{module}{sep}{alias.name}", bound))

    def visit_ExceptHandler(self, node):
        if node.type is not None:
            self.visit(node.type)
        if node.name:
            self._store(node.name)
        for stmt in node.body:
            self.visit(stmt)

    def visit_MatchAs(self, node):
        if node.pattern is not None:
            self.visit(node.pattern)
        if node.name:
            self._store(node.name)

    def visit_MatchStar(self, node):
        if node.name:
            self._store(node.name)

    def visit_MatchMapping(self, node):
        self.generic_visit(node)
        if node.rest:
            self._store(node.rest)

    def visit_FunctionDef(self, node):
        for part in _signature_parts(node):
            self.visit(part)
        self.deferred |= _function_free(node)
        self._store(node.name)

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_Lambda(self, node):
        for part in _signature_parts(node):
            self.visit(part)
        self.deferred |= _function_free(node)

    def visit_ClassDef(self, node):
        for part in node.decorator_list + node.bases + [k.value for k in node.keywords]:
            self.visit(part)
        now, later = _class_free(node)
        for name in sorted(now):
            self._load(name)
        self.deferred |= later
        self._store(node.name)

    def _comprehension(self, node):
        self.visit(node.generators[0].iter)
        for name in sorted(_comprehension_free(node)):
            self._load(name)

    visit_ListComp = visit_SetComp = visit_GeneratorExp = visit_DictComp = _comprehension

    def visit_Global(self, node):
        pass

    visit_Nonlocal = visit_Global


def extract_bindings(source: str) -> BindingSet:
    """Return the names a cell defines at module scope and the free names it reads.

    Function parameters and comprehension variables are local and never
    appear in ``defined``. For attribute access only the base name counts
    as a use. Raises ``SyntaxError`` when ``source`` does not parse.
    """
    tree = ast.parse(source)
    walker = _ModuleWalker()
    for stmt in tree.body:
        walker.visit(stmt)
    used = walker.used | (walker.deferred - walker.defined)
    return BindingSet(
        defined=frozenset(walker.defined),
        used=frozenset(used),
        imports=frozenset(walker.imports),
    )


# --------------------------------------------------------------------------
# definitions


@dataclass(frozen=True)
class Definition:
    kind: str
    name: str
    line_span: tuple[int, int]
    source_slice: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "line_span": list(self.line_span)}


def extract_definitions(source: str) -> list[Definition]:
    """List top-level functions and classes in order of appearance.

    The span starts at the first decorator, so removing ``source_slice``
    removes the whole definition.
    """
    tree = ast.parse(source)
    lines = source.splitlines(keepends=True)
    found = []
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            kind = "function"
        elif isinstance(node, ast.ClassDef):
            kind = "class"
        else:
            continue
        start = min([node.lineno] + [d.lineno for d in node.decorator_list])
        end = node.end_lineno
        text = "".join(lines[start - 1 : end])
        found.append(Definition(kind, node.name, (start, end), text))
    return found


# --------------------------------------------------------------------------
# syntax


@dataclass(frozen=True)
class SyntaxDiagnosis:
    line: int
    column: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, col {self.column}: {self.message}"


def check_syntax(source: str) -> Optional[SyntaxDiagnosis]:
    """Return ``None`` if ``source`` compiles as a module, else a diagnosis."""
    try:
        compile(source, "<cell>", "exec", dont_inherit=True)
    except SyntaxError as exc:
        return SyntaxDiagnosis(exc.lineno or 1, exc.offset or 0, exc.msg)
    except ValueError as exc:
        return SyntaxDiagnosis(1, 0, str(exc))
    return None


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class LintMessage:
    severity: str
    line: int
    code: str
    text: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "line": self.line, "code": self.code, "text": self.text}


@dataclass
class LintConfig:
    """Settings for :func:`validate_code`.

    ``linter_cmd`` is run as ``<linter_cmd> <file>``; leave it unset to use
    the built-in scorer. ``runtime_hook`` is the opt-in slot for dynamic
    checks and stays ``None`` unless a caller explicitly wires one in.
    """

    linter_cmd: Union[str, list, None] = None
    require_external: bool = False
    timeout_seconds: float = 30.0
    runtime_hook: Optional[Callable[[str], list]] = field(default=None, repr=False)


@dataclass(frozen=True)
class ValidationReport:
    score: Fraction
    messages: tuple[LintMessage, ...]
    syntactically_valid: bool
    scorer: str = "fallback"

    def to_tool_result(self) -> dict:
        return {
            "score": float(self.score),
            "valid": self.syntactically_valid,
            "messages": [m.to_dict() for m in self.messages],
        }


_SEVERITY = {"C": "convention", "R": "refactor", "W": "warning", "E": "error", "F": "fatal", "I": "info"}
_RATED = re.compile(r"rated at (-?\d+(?:\.\d+)?)/10")
_PYLINT_LINE = re.compile(r"^.+?:(\d+):\d+: ([A-Z]\d{4}): (.*)$")


def _sorted(messages) -> tuple[LintMessage, ...]:
    return tuple(sorted(messages, key=lambda m: (m.line, m.code, m.text)))


def _fallback_findings(source: str, tree: ast.Module) -> list[LintMessage]:
    findings = []

    loaded = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load)}
    exported = set()
    for node in tree.body:
        if isinstance(node, ast.Assign) and any(isinstance(t, ast.Name) and t.id == "__all__" for t in node.targets):
            exported |= {
                e.value for e in ast.walk(node.value) if isinstance(e, ast.Constant) and isinstance(e.value, str)
            }

    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            pairs = [(a.asname or a.name.split(".")[0], a.name) for a in node.names]
        elif isinstance(node, ast.ImportFrom) and node.module != "__future__":
            pairs = [(a.asname or a.name, a.name) for a in node.names if a.name != "*"]
        else:
            continue
        for bound, name in pairs:
            if bound not in loaded and bound not in exported:
                findings.append(LintMessage("warning", node.lineno, "W0611", f"Unused import {name}"))

    for lineno, line in enumerate(source.splitlines(), 1):
        if len(line) > LONG_LINE_LIMIT:
            findings.append(
                LintMessage("convention", lineno, "C0301", f"Line too long ({len(line)}/{LONG_LINE_LIMIT})")
            )

    for node in ast.walk(tree):
        shadows: list[tuple[str, int]] = []
        if isinstance(node, ast.Name) and isinstance(node.ctx, ast.Store):
            shadows.append((node.id, node.lineno))
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            shadows.append((node.name, node.lineno))
        elif isinstance(node, ast.arg):
            shadows.append((node.arg, node.lineno))
        elif isinstance(node, (ast.Import, ast.ImportFrom)):
            shadows += [(a.asname or a.name.split(".")[0], node.lineno) for a in node.names if a.name != "*"]
        elif isinstance(node, ast.ExceptHandler) and node.name:
            shadows.append((node.name, node.lineno))
        for name, lineno in shadows:
            if name in BUILTIN_NAMES:
                findings.append(LintMessage("warning", lineno, "W0622", f"Redefining built-in {name!r}"))
    return findings


def fallback_score(findings) -> Fraction:
    """Apply the deduction table to a list of findings, floored at 0."""
    penalty = {
        "W0611": UNUSED_IMPORT_PENALTY,
        "C0301": LONG_LINE_PENALTY,
        "W0622": SHADOWED_BUILTIN_PENALTY,
    }
    total = sum((penalty.get(m.code, Fraction(0)) for m in findings), Fraction(0))
    return max(Fraction(0), MAX_SCORE - total)


def _run_external(source: str, config: LintConfig) -> ValidationReport:
    cmd = shlex.split(config.linter_cmd) if isinstance(config.linter_cmd, str) else list(config.linter_cmd)
    with tempfile.TemporaryDirectory(prefix="codelift-lint-") as scratch:
        path = Path(scratch) / "candidate.py"
        path.write_text(source, encoding="utf-8")
        try:
            proc = subprocess.run(
                cmd + [str(path)],
                capture_output=True,
                text=True,
                timeout=config.timeout_seconds,
                cwd=scratch,
            )
        except FileNotFoundError as exc:
            raise LinterUnavailable(f"linter not found: {cmd[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise LinterUnavailable(f"linter timed out after {config.timeout_seconds}s") from exc
    rated = _RATED.search(proc.stdout)
    if rated is None:
        raise LinterUnavailable(f"linter exited {proc.returncode} without a rating line")
    score = Fraction(rated.group(1))
    score = min(MAX_SCORE, max(Fraction(0), score))
    messages = []
    for line in proc.stdout.splitlines():
        m = _PYLINT_LINE.match(line)
        if m:
            code = m.group(2)
            messages.append(LintMessage(_SEVERITY.get(code[0], "info"), int(m.group(1)), code, m.group(3)))
    return ValidationReport(score, _sorted(messages), True, scorer="external")


def validate_code(source: str, config: Optional[LintConfig] = None) -> ValidationReport:
    """Score ``source`` on a 0-10 scale.

    Syntax errors always score 0. With ``config.linter_cmd`` set, the score
    and messages come from the external linter; if it cannot be run, the
    built-in scorer is used instead unless ``require_external`` is set, in
    which case :class:`LinterUnavailable` is raised. The built-in scorer
    deducts 0.5 per unused import, 0.1 per line over 120 characters and 0.5
    per binding that shadows a builtin.
    """
    config = config or LintConfig()
    diag = check_syntax(source)
    if diag is not None:
        msg = LintMessage("error", diag.line, "E0001", f"Syntax error: {diag.message}")
        return ValidationReport(Fraction(0), (msg,), False)

    report = None
    if config.linter_cmd:
        try:
            report = _run_external(source, config)
        except LinterUnavailable:
            if config.require_external:
                raise
            logger.warning("external linter unavailable, using built-in scorer", exc_info=True)
    elif config.require_external:
        raise LinterUnavailable("require_external is set but no linter_cmd is configured")

    if report is None:
        findings = _fallback_findings(source, ast.parse(source))
        report = ValidationReport(fallback_score(findings), _sorted(findings), True)

    if config.runtime_hook is not None:
        extra = [m if isinstance(m, LintMessage) else LintMessage(*m) for m in config.runtime_hook(source)]
        report = ValidationReport(report.score, _sorted(list(report.messages) + extra), True, report.scorer)
    return report
