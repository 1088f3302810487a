"""End-to-end run: ingest, graph, architect, developer, structure.

Stages run strictly one after another on a single graph. Intermediate
artifacts go to ``<out>/.codelift-stages/`` and, with tracing on, every
model conversation to ``<out>/.codelift-trace/``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .analysis import LintConfig
from .architect import run_architect
from .developer import DeveloperLimits, run_developer
from .errors import CodeliftError, WorkspaceNotEmpty
from .graph import DependencyGraph, build_graph, export_graph
from .llm import BackendScript, EndpointConfig, OpenAIBackend, ScriptedBackend, transcript_to_json
from .notebook import CleanCell, Notebook, clean_cells, parse_notebook
from .structure import DEFAULT_ROOT, EmittedRepo, FilePlan, run_structure

logger = logging.getLogger(__name__)

STAGES_DIR = ".codelift-stages"
TRACE_DIR = ".codelift-trace"


@dataclass
class RunConfig:
    input_path: Path
    out_dir: Path
    endpoint: Optional[EndpointConfig] = None
    mock_script_path: Optional[Path] = None
    developer: DeveloperLimits = field(default_factory=DeveloperLimits)
    structure_max_rounds: int = 12
    lint: LintConfig = field(default_factory=LintConfig)
    trace: bool = False
    root_module_name: Optional[str] = None

    def check(self) -> None:
        if (self.endpoint is None) == (self.mock_script_path is None):
            raise ValueError("exactly one of an endpoint or a mock script must drive the backend")
        out = Path(self.out_dir)
        if out.exists() and (not out.is_dir() or any(out.iterdir())):
            raise WorkspaceNotEmpty(f"output directory {out} exists and is not empty")


class StageFailure(CodeliftError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")


@dataclass
class RunResult:
    graph: DependencyGraph
    plan: FilePlan
    repo: EmittedRepo
    outcomes: list = field(default_factory=list)
    plan_warnings: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.repo.substitutions else 0


def module_root_for(path) -> str:
    """A package name derived from a notebook file name."""
    stem = Path(path).name
    if stem.endswith(".ipynb"):
        stem = stem[: -len(".ipynb")]
    name = re.sub(r"\W+", "_", stem.lower()).strip("_")
    if not name:
        return DEFAULT_ROOT
    if name[0].isdigit():
        name = "nb_" + name
    return name


def load_cells(path) -> tuple[Notebook, list[CleanCell]]:
    nb = parse_notebook(Path(path).read_bytes())
    return nb, clean_cells(nb)


def make_backend(config: RunConfig):
    if config.mock_script_path is not None:
        return ScriptedBackend(BackendScript.load(config.mock_script_path))
    return OpenAIBackend(config.endpoint)


def _dump(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run_pipeline(config: RunConfig, backend=None) -> RunResult:
    """Run every stage; raises :class:`StageFailure` naming the failing stage."""
    config.check()
    if backend is None:
        backend = make_backend(config)
    out = Path(config.out_dir)
    root_name = config.root_module_name or module_root_for(config.input_path)
    transcripts: dict[str, list] = {}

    def stage(name, fn, *args, **kwargs):
        logger.info("stage %s", name)
        try:
            return fn(*args, **kwargs)
        except CodeliftError as exc:
            raise StageFailure(name, exc) from exc
        finally:
            if config.trace:
                for key, messages in sorted(transcripts.items()):
                    _dump(out / TRACE_DIR / f"{key}.json", transcript_to_json(messages))

    _, cells = stage("ingest", load_cells, config.input_path)
    g = stage("graph", build_graph, cells)
    out.mkdir(parents=True, exist_ok=True)
    stages = out / STAGES_DIR
    _dump(stages / "graph.json", export_graph(g, "json").decode("utf-8"))

    stage("architect", run_architect, g, backend, transcripts)
    _dump(stages / "adrs.json", _json([n.adr.to_dict() for n in g]))

    outcomes: list = []
    stage("developer", run_developer, g, backend, config.developer, config.lint, transcripts, outcomes)
    _dump(stages / "refactor_outcomes.json", _json([o.to_dict() for o in outcomes]))
    for node in g:
        _dump(stages / "refactored" / f"cell_{node.id}.py", node.refactored + "\n")

    plan_warnings: list = []
    plan, repo = stage(
        "structure",
        run_structure,
        g,
        backend,
        out,
        root_name,
        config.lint,
        config.structure_max_rounds,
        transcripts,
        plan_warnings,
    )
    _dump(stages / "fileplan.json", _json({"plan": plan.to_dict(), "warnings": plan_warnings}))
    _dump(stages / "graph_final.json", _json(g.to_dict()))
    return RunResult(g, plan, repo, outcomes, plan_warnings)
