"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class CodeliftError(Exception):
    """Base class for all errors raised by codelift."""


# notebook ingest


class NotebookError(CodeliftError):
    """The input document could not be read as a notebook."""


class MalformedJson(NotebookError):
    pass


class UnsupportedFormat(NotebookError):
    pass


class MissingField(NotebookError):
    pass


# analysis / graph


class LinterUnavailable(CodeliftError):
    pass


class GraphError(CodeliftError):
    pass


class EmptyNotebook(GraphError):
    pass


class UnparseableCells(GraphError):
    """Raised when one or more cells fail the syntax check.

    ``failures`` holds ``(cell_id, SyntaxDiagnosis)`` pairs.
    """

    def __init__(self, failures):
        self.failures = list(failures)
        detail = "; ".join(f"cell {cid}: {diag}" for cid, diag in self.failures)
        super().__init__(f"{len(self.failures)} unparseable cell(s): {detail}")


class UnknownNode(GraphError, KeyError):
    def __str__(self) -> str:
        return f"unknown node: {self.args[0]!r}" if self.args else "unknown node"


class WriteOnceViolation(GraphError):
    pass


# llm gateway


class LLMError(CodeliftError):
    pass


class AuthError(LLMError):
    pass


class RateLimited(LLMError):
    pass


class ProtocolError(LLMError):
    pass


class Timeout(LLMError):
    pass


class ScriptExhausted(LLMError):
    pass


class UnknownTool(LLMError):
    pass


class RoundLimitExceeded(LLMError):
    def __init__(self, max_rounds: int, transcript=None):
        self.max_rounds = max_rounds
        self.transcript = list(transcript or [])
        super().__init__(f"tool loop exceeded {max_rounds} round(s)")


# agents


class StageError(CodeliftError):
    pass


class AdrParseError(StageError):
    pass


class MissingAdr(StageError):
    pass


class NoCodeBlock(StageError):
    pass


class CellFailed(StageError):
    def __init__(self, cell_id: int, cause: BaseException):
        self.cell_id = cell_id
        self.cause = cause
        super().__init__(f"cell {cell_id} failed: {type(cause).__name__}: {cause}")


# structure / sandbox


class ToolError(CodeliftError):
    """Error raised inside a tool executor; reported back to the model."""


class SandboxViolation(ToolError):
    pass


class NotFound(ToolError):
    pass


class WorkspaceNotEmpty(StageError):
    pass
