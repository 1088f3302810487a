"""codelift: turn exploratory Jupyter notebooks into structured Python code bases.

The pipeline parses and cleans a notebook, links its cells into a
dependency graph, then hands that graph through three model-driven stages
(architect, developer, structure) before writing a multi-file package.
"""

from .analysis import (
    BindingSet,
    Definition,
    LintConfig,
    SyntaxDiagnosis,
    ValidationReport,
    check_syntax,
    extract_bindings,
    extract_definitions,
    validate_code,
)
from .architect import AdrRecord, ArchDecision, format_architect_prompt, parse_adr, run_architect
from .developer import DeveloperLimits, RefactorOutcome, format_developer_prompt, refactor_cell, run_developer
from .graph import CellNode, DependencyGraph, ancestors, build_graph, export_graph, skeleton
from .llm import (
    BackendScript,
    ChatMessage,
    EndpointConfig,
    OpenAIBackend,
    ScriptedBackend,
    Tool,
    ToolCall,
    chat,
    run_tool_loop,
)
from .notebook import CleanCell, Notebook, NotebookCell, clean_cells, parse_notebook, strip_comments
from .pipeline import RunConfig, run_pipeline
from .structure import (
    EmittedRepo,
    FilePlan,
    PlanEntry,
    Sandbox,
    extract_all_definitions,
    fallback_plan,
    populate_files,
    propose_file_plan,
)

__version__ = "0.1.0"
