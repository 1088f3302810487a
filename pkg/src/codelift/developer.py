"""Developer stage: refactor every cell according to its ADR.

Each cell goes through prompt formatting, a model/tool loop where the model
can call ``validation`` on candidates, extraction of the final code block,
and a write into the node's refactored slot. The stage keeps the
best-scoring valid candidate it has seen and never returns code that
scores below the cell's original source.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .analysis import LintConfig, ValidationReport, validate_code
from .architect import code_block
from .errors import CellFailed, CodeliftError, MissingAdr, NoCodeBlock, RoundLimitExceeded, StageError
from .graph import DependencyGraph, ancestors
from .llm import ChatMessage, Tool, fenced_blocks, run_tool_loop, system, user
from .prompts import prompt

logger = logging.getLogger(__name__)

CODE_TAGS = ("", "python", "py", "python3")


@dataclass
class DeveloperLimits:
    max_rounds: int = 6
    accept_score: Fraction = Fraction(8)

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        self.accept_score = Fraction(self.accept_score)
        if not 0 <= self.accept_score <= 10:
            raise ValueError("accept_score must lie in [0, 10]")


@dataclass(frozen=True)
class RefactorOutcome:
    cell_id: int
    code: str
    score: Fraction
    rounds_used: int
    initial_score: Fraction
    kept_original: bool = False

    def to_dict(self) -> dict:
        return {
            "cell_id": self.cell_id,
            "score": float(self.score),
            "initial_score": float(self.initial_score),
            "rounds_used": self.rounds_used,
            "kept_original": self.kept_original,
        }


def extract_code(text: str) -> Optional[str]:
    """Body of the last Python (or untagged) fenced block in ``text``."""
    blocks = [body for tag, body in fenced_blocks(text) if tag in CODE_TAGS]
    return blocks[-1] if blocks else None


def validation_tool(lint: Optional[LintConfig] = None, sink: Optional[list] = None) -> Tool:
    """The ``validation`` tool; every report it produces is appended to ``sink``."""

    def validation(code: str) -> dict:
        report = validate_code(code, lint)
        if sink is not None:
            sink.append((code, report))
        return report.to_tool_result()

    return Tool(
        name="validation",
        fn=validation,
        description="Lint a Python snippet. Returns a 0-10 score (0 = does not parse), validity and messages.",
        parameters={
            "type": "object",
            "properties": {"code": {"type": "string", "description": "Python source to check"}},
            "required": ["code"],
        },
    )


def format_developer_prompt(g: DependencyGraph, node_id: int) -> list[ChatMessage]:
    node = g[node_id]
    if node.adr is None:
        raise MissingAdr(f"cell {node_id} has no ADR")
    parts = [code_block(f"cell {anc.id}", anc.current_code) for anc in ancestors(g, node_id)]
    parts.append(code_block(f"current cell {node.id}", node.source))
    adr = json.dumps(node.adr.to_dict(), indent=2, sort_keys=True)
    parts.append(f"### ADR for cell {node.id}\n```json\n{adr}\n```")
    return [system(prompt("developer_system")), user("\n\n".join(parts))]


def _tool_rounds(messages: list[ChatMessage], start: int) -> int:
    return sum(1 for m in messages[start:] if m.role == "assistant" and m.tool_calls)


def _format_messages(report: ValidationReport) -> str:
    if not report.messages:
        return "(none)"
    return "\n".join(f"line {m.line}: {m.code} {m.text}" for m in report.messages)


def _best(candidates) -> Optional[tuple[str, ValidationReport]]:
    best = None
    for code, report in candidates:
        if report.syntactically_valid and (best is None or report.score >= best[1].score):
            best = (code, report)
    return best


def refactor_cell(
    backend,
    g: DependencyGraph,
    node_id: int,
    limits: Optional[DeveloperLimits] = None,
    lint: Optional[LintConfig] = None,
    transcript: Optional[list] = None,
) -> RefactorOutcome:
    """Refactor one cell through the validation loop.

    A round is either one batch of ``validation`` calls or one request by
    the stage to improve a final answer scoring below ``accept_score``; at
    most ``limits.max_rounds`` rounds are spent.
    """
    limits = limits or DeveloperLimits()
    messages = format_developer_prompt(g, node_id)
    original = g[node_id].source
    initial = validate_code(original, lint)

    candidates: list[tuple[str, ValidationReport]] = []
    tool = validation_tool(lint, candidates)
    rounds = 0
    retried = False
    try:
        while True:
            budget = limits.max_rounds - rounds
            start = len(messages)
            try:
                if budget >= 1:
                    final, messages = run_tool_loop(backend, messages, {"validation": tool}, budget)
                    rounds += _tool_rounds(messages, start)
                else:
                    final = backend.complete(list(messages), [tool.schema()])
                    messages.append(final)
                    if final.tool_calls:
                        raise RoundLimitExceeded(limits.max_rounds, messages)
            except RoundLimitExceeded as exc:
                messages = exc.transcript
                rounds = limits.max_rounds
                logger.info("cell %d: validation round limit reached", node_id)
                break

            code = extract_code(final.content)
            if code is None:
                if retried:
                    raise NoCodeBlock(f"cell {node_id}: final reply has no fenced code block")
                retried = True
                messages.append(user(prompt("developer_retry", cell_id=node_id)))
                continue

            report = validate_code(code, lint)
            candidates.append((code, report))
            best = _best(candidates)
            if (best is not None and best[1].score >= limits.accept_score) or rounds >= limits.max_rounds:
                break
            messages.append(
                user(
                    prompt(
                        "developer_improve",
                        score=float(report.score),
                        threshold=float(limits.accept_score),
                        messages=_format_messages(report),
                    )
                )
            )
            rounds += 1
    finally:
        if transcript is not None:
            transcript[:] = messages

    best = _best(candidates)
    if best is None:
        logger.warning("cell %d: no syntactically valid candidate, keeping original", node_id)
        code, score, kept = original, initial.score, True
    elif best[1].score < initial.score:
        logger.info("cell %d: best candidate %s < original %s, keeping original", node_id, best[1].score, initial.score)
        code, score, kept = original, initial.score, True
    else:
        code, score, kept = best[0], best[1].score, False
    return RefactorOutcome(node_id, code, score, max(1, rounds), initial.score, kept)


def run_developer(
    g: DependencyGraph,
    backend,
    limits: Optional[DeveloperLimits] = None,
    lint: Optional[LintConfig] = None,
    transcripts: Optional[dict] = None,
    outcomes: Optional[list] = None,
) -> DependencyGraph:
    """Refactor every node in ascending id order and fill its refactored slot."""
    for node in g:
        if node.adr is None:
            raise MissingAdr(f"cell {node.id} has no ADR")
        if node.refactored is not None:
            raise StageError("developer stage expects a graph without refactored code")
    for node in g:
        log: list = []
        try:
            outcome = refactor_cell(backend, g, node.id, limits, lint, transcript=log)
        except CodeliftError as exc:
            raise CellFailed(node.id, exc) from exc
        finally:
            if transcripts is not None:
                transcripts[f"developer_cell_{node.id}"] = log
        node.refactored = outcome.code
        if outcomes is not None:
            outcomes.append(outcome)
    return g
