"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see only these lines;
they are also printed under normal output capture.
"""

import contextlib
import json
import random
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codelift.analysis import check_syntax, extract_bindings, extract_definitions, validate_code
from codelift.cli import main
from codelift.developer import DeveloperLimits, refactor_cell
from codelift.errors import NoCodeBlock, RoundLimitExceeded
from codelift.graph import build_graph
from codelift.llm import BackendScript, ScriptedBackend, ToolCall, execute_tool_call, run_tool_loop, user
from codelift.notebook import clean_cells, parse_notebook, strip_comments
from codelift.pipeline import load_cells, module_root_for
from codelift.scripting import identity_script
from codelift.structure import Sandbox, fallback_plan, render_fallback_repo, sandbox_tools

from conftest import ALL_NOTEBOOKS, CORPUS, GOLDEN_NOTEBOOKS, clean
from test_analysis import DEDUCTION_FIXTURES
from test_cli import OFFLINE_RUNNER
from test_developer import _CANDIDATES, SCORE_3, SCORE_7, SCORE_9, SCORE_10, _graph_with_adrs, _step
from test_graph import random_notebook, scan_oracle
from test_notebook import _snippet, _tokenizer_oracle
from test_structure import _tree_digest, hostile_paths


@pytest.fixture
def criterion(request):
    """Yield a recorder; print one PASS/FAIL line when the test finishes."""
    capman = request.config.pluginmanager.getplugin("capturemanager")
    state = {"detail": ""}

    @contextlib.contextmanager
    def run(number: int, title: str):
        ok = False
        try:
            yield state
            ok = True
        finally:
            line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {title}"
            if state["detail"]:
                line += f" [{state['detail']}]"
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)

    return run


def _script_for(nb: Path, tmp_path: Path) -> Path:
    _, cells = load_cells(nb)
    path = tmp_path / f"{nb.stem}.script.json"
    path.write_text(identity_script(cells, root_module_name=module_root_for(nb)).to_json())
    return path


def _emitted(root: Path) -> dict[str, str]:
    return {
        p.relative_to(root).as_posix(): p.read_text()
        for p in sorted(root.rglob("*.py"))
        if not any(part.startswith(".codelift-") for part in p.relative_to(root).parts)
    }


def test_criterion_01_graph_oracle(criterion):
    with criterion(1, "dependency graph equals the O(n^2) scan oracle on 200 notebooks") as rec:
        matches = 0
        for seed in range(200):
            cells = random_notebook(seed)
            assert 5 <= len(cells) <= 15
            g = build_graph(clean(*(s for s, _, _ in cells)))
            matches += g.edges() == scan_oracle(cells)
        rec["detail"] = f"{matches}/200 match"
        assert matches == 200


def test_criterion_02_determinism(criterion, tmp_path):
    with criterion(2, "repeated runs give byte-identical manifests and transcripts") as rec:
        checked = 0
        for name in GOLDEN_NOTEBOOKS:
            nb = CORPUS / name
            script = _script_for(nb, tmp_path)
            outs = []
            for k in range(2):
                out = tmp_path / f"{nb.stem}_{k}"
                assert main(["run", str(nb), "--mock-script", str(script), "--out", str(out), "--trace"]) == 0
                outs.append(out)
            a, b = outs
            assert (a / ".codelift-manifest.json").read_bytes() == (b / ".codelift-manifest.json").read_bytes()
            traces_a = sorted((a / ".codelift-trace").iterdir())
            assert [p.name for p in traces_a] == sorted(p.name for p in (b / ".codelift-trace").iterdir())
            for p in traces_a:
                assert p.read_bytes() == (b / ".codelift-trace" / p.name).read_bytes()
            checked += 1
        rec["detail"] = f"{checked} notebooks, traced"


def test_criterion_03_identity_preservation(criterion, tmp_path):
    with criterion(3, "identity pipeline keeps every cell's top-level names; all files compile") as rec:
        cells_checked = files_checked = 0
        for name in GOLDEN_NOTEBOOKS:
            nb = CORPUS / name
            out = tmp_path / nb.stem
            assert main(["run", str(nb), "--mock-script", str(_script_for(nb, tmp_path)), "--out", str(out)]) == 0
            emitted = _emitted(out)
            for source in emitted.values():
                assert check_syntax(source) is None
                files_checked += 1
            plan = json.loads((out / ".codelift-stages" / "fileplan.json").read_text())["plan"]
            for cell in clean_cells(parse_notebook(nb.read_bytes())):
                home = f"src/{plan['root_module_name']}/cells/cell_{cell.index}.py"
                original = extract_bindings(cell.source)
                now = extract_bindings(emitted[home])
                # Nothing lost; extra bindings only come from imports the
                # emitted module needs for names the cell already read.
                assert original.defined <= now.defined
                assert now.defined - original.defined <= original.used
                cells_checked += 1
        rec["detail"] = f"{cells_checked} cells, {files_checked} files"


def test_criterion_04_developer_monotonicity(criterion):
    with criterion(4, "developer outcome never scores below the original; rounds bounded") as rec:
        seen = {"runs": 0, "no_block": 0}

        @settings(max_examples=300, deadline=None, database=None)
        @given(
            original=st.sampled_from([SCORE_10, SCORE_9, SCORE_7, SCORE_3]),
            steps=st.lists(_step, min_size=1, max_size=12),
            max_rounds=st.integers(1, 6),
            accept=st.sampled_from([Fraction(0), Fraction(8), Fraction(19, 2), Fraction(10)]),
        )
        def prop(original, steps, max_rounds, accept):
            g = _graph_with_adrs(original)
            limits = DeveloperLimits(max_rounds=max_rounds, accept_score=accept)
            try:
                out = refactor_cell(ScriptedBackend(BackendScript(steps, strict=False)), g, 0, limits)
            except NoCodeBlock:
                seen["no_block"] += 1
                return
            seen["runs"] += 1
            assert out.score >= validate_code(original).score
            assert out.rounds_used <= max_rounds

        prop()
        rec["detail"] = f"{seen['runs']} outcomes checked, {seen['no_block']} NoCodeBlock"
        assert seen["runs"] > 100


def test_criterion_05_validation_adapter(criterion):
    with criterion(5, "score 0 iff syntax-invalid; deduction table exact on 10 fixtures") as rec:
        assert len(DEDUCTION_FIXTURES) == 10
        for _, source, expected in DEDUCTION_FIXTURES:
            report = validate_code(source)
            assert isinstance(report.score, Fraction) and report.score == expected
        invalid = ["def f(:", "x = (", "return 1", "class:", "yield = 1", "for in x: pass"]
        rng = random.Random(5)
        valid = []
        for _ in range(200):
            lines = [rng.choice(["x = 1", "import os", "list = 2", "print(x)", "y = 'a' * 200"]) for _ in range(rng.randint(1, 12))]
            valid.append("\n".join(lines))
        for source in invalid:
            assert validate_code(source).score == 0 and check_syntax(source) is not None
        for source in valid:
            assert check_syntax(source) is None and validate_code(source).score > 0
        # The floored fixture is the one valid input allowed to reach 0 (25 unused imports).
        floored = DEDUCTION_FIXTURES[-1][1]
        rec["detail"] = f"10 fixtures, {len(invalid)} invalid, {len(valid)} valid snippets; floor case {len(floored.splitlines())} lines"


def test_criterion_06_dry(criterion, tmp_path):
    with criterion(6, "function defined in 3 cells is emitted exactly once, other copies import it") as rec:
        nb = CORPUS / "sales_analysis.ipynb"
        _, cells = load_cells(nb)
        dup_cells = [c.index for c in cells if any(d.name == "clean_amount" for d in extract_definitions(c.source))]
        assert len(dup_cells) == 3
        # A naive population step: every cell copied verbatim, duplicates included.
        root = module_root_for(nb)
        script = json.loads(identity_script(cells, root_module_name=root).to_json())
        g = build_graph(cells)
        for node in g:
            node.refactored = node.source
        plan = fallback_plan(g, root)
        naive = dict(render_fallback_repo(g, plan))
        for c in cells:
            naive[f"src/{root}/cells/cell_{c.index}.py"] = c.source + "\n"
        (write_step,) = [s for s in script["steps"] if s.get("tool_calls")]
        write_step["tool_calls"] = [
            {"name": "write_file", "arguments": {"path": p, "content": naive[p]}} for p in sorted(naive)
        ]
        path = tmp_path / "naive.json"
        path.write_text(json.dumps(script))
        out = tmp_path / "out"
        code = main(["run", str(nb), "--mock-script", str(path), "--out", str(out)])
        emitted = _emitted(out)
        defs = [d.name for s in emitted.values() for d in extract_definitions(s)]
        assert defs.count("clean_amount") == 1
        keeper = f"src/{root}/cells/cell_{dup_cells[0]}.py"
        for idx in dup_cells[1:]:
            assert f"from {root}.cells.cell_{dup_cells[0]} import clean_amount" in emitted[f"src/{root}/cells/cell_{idx}.py"]
        assert "def clean_amount" in emitted[keeper]
        assert all(check_syntax(s) is None for s in emitted.values())
        assert code == 0
        rec["detail"] = f"cells {dup_cells} -> 1 definition in {keeper}"


def test_criterion_07_sandbox(criterion, tmp_path):
    with criterion(7, "100 hostile tool paths leave everything outside the workspace untouched") as rec:
        workspace, outside = tmp_path / "ws", tmp_path / "outside"
        workspace.mkdir()
        outside.mkdir()
        (outside / "secret.txt").write_text("keep me")
        (workspace / "link").symlink_to(outside, target_is_directory=True)
        (workspace / "filelink").symlink_to(outside / "secret.txt")
        before_outside = _tree_digest(outside)
        siblings_before = sorted(p.name for p in tmp_path.iterdir())
        tools = sandbox_tools(Sandbox(workspace), build_graph(clean("x = 1")))
        paths = hostile_paths(outside)
        assert len(paths) == 100
        refused = 0
        for k, path in enumerate(paths):
            for name, args in [
                ("write_file", {"path": path, "content": "pwned"}),
                ("read_file", {"path": path}),
                ("list_directory", {"path": path}),
            ]:
                result = execute_tool_call(ToolCall(f"c{k}", name, json.dumps(args)), tools)
                refused += "SandboxViolation" in result
                assert "keep me" not in result
        assert _tree_digest(outside) == before_outside
        assert sorted(p.name for p in tmp_path.iterdir()) == siblings_before
        assert not any(p.name.endswith(".py") or p.name == "passwd" for p in tmp_path.parent.iterdir() if p.is_file())
        rec["detail"] = f"{refused}/300 tool calls refused, outside tree unchanged"


def test_criterion_08_tool_loop_bounds(criterion):
    with criterion(8, "runaway tool calling stops with RoundLimitExceeded after max_rounds executions") as rec:
        for max_rounds in range(1, 7):
            calls = []
            step = {"tool_calls": [{"name": "validation", "arguments": {"code": "x = 1"}}]}
            backend = ScriptedBackend(BackendScript([step], strict=False))
            with pytest.raises(RoundLimitExceeded):
                run_tool_loop(backend, [user("go")], {"validation": lambda code: calls.append(code) or {}}, max_rounds)
            assert len(calls) == max_rounds
        calls = []
        backend = ScriptedBackend(BackendScript([step] * 5))
        with pytest.raises(RoundLimitExceeded):
            run_tool_loop(backend, [user("go")], {"validation": lambda code: calls.append(code) or {}}, 3)
        assert len(calls) == 3
        rec["detail"] = "max_rounds 1..6 plus the 5-call/3-round script"


def test_criterion_09_comment_stripping(criterion):
    with criterion(9, "comment stripping matches the tokenizer oracle; idempotent on corpus") as rec:
        rng = random.Random(20240611)
        snippets = [_snippet(rng) for _ in range(50)]
        agree = sum(strip_comments(s) == _tokenizer_oracle(s) for s in snippets)
        cells = [c.source for n in ALL_NOTEBOOKS for c in parse_notebook((CORPUS / n).read_bytes()).code_cells()]
        stable = sum(strip_comments(strip_comments(s)) == strip_comments(s) for s in cells)
        rec["detail"] = f"{agree}/50 oracle, {stable}/{len(cells)} idempotent"
        assert agree == 50
        assert stable == len(cells)


def test_criterion_10_offline(criterion, tmp_path):
    with criterion(10, "full pipeline with --mock-script exits 0 with networking disabled") as rec:
        codes = {}
        for name in GOLDEN_NOTEBOOKS:
            nb = CORPUS / name
            script = _script_for(nb, tmp_path)
            proc = subprocess.run(
                [sys.executable, "-c", OFFLINE_RUNNER, "run", str(nb), "--mock-script", str(script), "--out", str(tmp_path / nb.stem)],
                capture_output=True,
                text=True,
                timeout=120,
            )
            codes[name] = proc.returncode
        rec["detail"] = ", ".join(f"{k}={v}" for k, v in codes.items())
        assert set(codes.values()) == {0}
