"""Replay scripts for offline runs.

:func:`identity_script` builds the script of a model that changes nothing:
the architect records a single keep-as-is decision, the developer echoes
each cell back, and the structure stage writes the fallback layout. Running
the pipeline on it gives the zero-intelligence baseline of a notebook.
"""

from __future__ import annotations

import json
from typing import Optional

from .analysis import LintConfig, validate_code
from .developer import DeveloperLimits
from .graph import build_graph
from .llm import BackendScript
from .notebook import CleanCell
from .structure import DEFAULT_ROOT, fallback_plan, render_fallback_repo

KEEP_DECISION = {
    "title": "Keep cell as is",
    "description": "Preserve the cell's code and the names other cells rely on.",
    "parent_refs": [],
    "category": "other",
}


def adr_reply(decisions) -> str:
    return "```adr\n" + json.dumps({"decisions": list(decisions)}, sort_keys=True) + "\n```"


def code_reply(code: str) -> str:
    return f"```python\n{code}\n```"


def fileplan_reply(plan_doc: dict) -> str:
    return "```fileplan\n" + json.dumps(plan_doc, indent=2, sort_keys=True) + "\n```"


def identity_script(
    cells: list[CleanCell],
    limits: Optional[DeveloperLimits] = None,
    lint: Optional[LintConfig] = None,
    root_module_name: str = DEFAULT_ROOT,
) -> BackendScript:
    limits = limits or DeveloperLimits()
    g = build_graph(cells)
    steps: list[dict] = [{"content": adr_reply([KEEP_DECISION])} for _ in g]

    for node in g:
        # A cell scoring under the threshold gets an improvement request per
        # remaining round; the echo is repeated for each of them.
        repeats = 1
        if validate_code(node.source, lint).score < limits.accept_score:
            repeats += limits.max_rounds
        steps += [{"content": code_reply(node.source)}] * repeats

    for node in g:
        node.refactored = node.source
    plan = fallback_plan(g, root_module_name)
    files = render_fallback_repo(g, plan)
    steps.append({"content": fileplan_reply(plan.to_dict())})
    steps.append(
        {
            "content": "",
            "tool_calls": [
                {"name": "write_file", "arguments": {"path": path, "content": files[path]}} for path in sorted(files)
            ],
        }
    )
    steps.append({"content": "All planned files are written."})
    return BackendScript(steps=steps, strict=True)
