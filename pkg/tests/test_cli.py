import hashlib
import json
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from codelift.cli import main
from codelift.llm import BackendScript
from codelift.pipeline import RunConfig, StageFailure, load_cells, module_root_for, run_pipeline
from codelift.scripting import identity_script

from conftest import CORPUS, GOLDEN_NOTEBOOKS, notebook_bytes

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def chain_nb(tmp_path):
    path = tmp_path / "chain.ipynb"
    path.write_bytes(notebook_bytes([("markdown", "# t"), ("code", "x = 1  # one"), ("code", "y = x + 1")]))
    return path


def _script_for(nb_path: Path, tmp_path: Path, name="script.json") -> Path:
    _, cells = load_cells(nb_path)
    out = tmp_path / name
    out.write_text(identity_script(cells, root_module_name=module_root_for(nb_path)).to_json())
    return out


def _tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# ingest and graph


def test_ingest_summary(chain_nb, capsys):
    assert main(["ingest", str(chain_nb)]) == 0
    out = capsys.readouterr()
    assert out.out == "3 cells (code=2, markdown=1, raw=0); 2 code cells after cleaning\n"
    assert out.err == ""


def test_ingest_json_roundtrips(chain_nb, capsys):
    assert main(["ingest", "--json", str(chain_nb)]) == 0
    assert json.loads(capsys.readouterr().out) == [{"index": 1, "source": "x = 1"}, {"index": 2, "source": "y = x + 1"}]


def test_ingest_malformed(tmp_path, capsys):
    bad = tmp_path / "bad.ipynb"
    bad.write_text("{oops")
    assert main(["ingest", str(bad)]) == 2
    out = capsys.readouterr()
    assert out.out == ""
    assert "not valid JSON" in out.err


def test_ingest_missing_file(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope.ipynb")]) == 2
    assert "nope.ipynb" in capsys.readouterr().err


def test_graph_json_and_dot(chain_nb, capsys, tmp_path):
    assert main(["graph", str(chain_nb)]) == 0
    assert json.loads(capsys.readouterr().out)["edges"] == [[1, 2]]
    assert main(["graph", "--format", "dot", str(chain_nb)]) == 0
    assert "n1 -> n2;" in capsys.readouterr().out
    out = tmp_path / "g.json"
    assert main(["graph", str(chain_nb), "--out", str(out)]) == 0
    assert capsys.readouterr().out == ""
    first = out.read_bytes()
    out.unlink()
    main(["graph", str(chain_nb), "--out", str(out)])
    assert out.read_bytes() == first


def test_graph_unparseable(tmp_path, capsys):
    nb = tmp_path / "bad.ipynb"
    nb.write_bytes(notebook_bytes([("code", "def f(:")]))
    assert main(["graph", str(nb)]) == 2
    assert "UnparseableCells" in capsys.readouterr().err


# --------------------------------------------------------------------------
# run


@pytest.mark.parametrize("name", GOLDEN_NOTEBOOKS)
def test_run_matches_golden_manifest(name, tmp_path, capsys):
    nb = CORPUS / name
    script = _script_for(nb, tmp_path)
    out = tmp_path / "out"
    assert main(["run", str(nb), "--mock-script", str(script), "--out", str(out)]) == 0
    assert capsys.readouterr().out == ""
    manifest = (out / ".codelift-manifest.json").read_text()
    assert manifest == (GOLDEN / name.replace(".ipynb", ".manifest.json")).read_text()


def test_run_writes_stage_artifacts_and_traces(chain_nb, tmp_path):
    script = _script_for(chain_nb, tmp_path)
    out = tmp_path / "out"
    assert main(["run", str(chain_nb), "--mock-script", str(script), "--out", str(out), "--trace"]) == 0
    stages = sorted(p.name for p in (out / ".codelift-stages").iterdir())
    assert stages == [
        "adrs.json",
        "fileplan.json",
        "graph.json",
        "graph_final.json",
        "refactor_outcomes.json",
        "refactored",
    ]
    traces = sorted(p.name for p in (out / ".codelift-trace").iterdir())
    assert traces == [
        "architect_cell_1.json",
        "architect_cell_2.json",
        "developer_cell_1.json",
        "developer_cell_2.json",
        "structure_plan.json",
        "structure_population.json",
    ]
    final = json.loads((out / ".codelift-stages" / "graph_final.json").read_text())
    assert [n["refactored"] for n in final["nodes"]] == ["x = 1", "y = x + 1"]


def test_run_deterministic_with_traces(tmp_path):
    nb = CORPUS / "sales_analysis.ipynb"
    script = _script_for(nb, tmp_path)
    hashes = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert main(["run", str(nb), "--mock-script", str(script), "--out", str(out), "--trace"]) == 0
        hashes.append(_tree_hash(out))
    assert hashes[0] == hashes[1]


def test_run_with_syntax_error_file_exits_1(chain_nb, tmp_path, capsys):
    script_path = _script_for(chain_nb, tmp_path)
    doc = json.loads(script_path.read_text())
    (write_step,) = [s for s in doc["steps"] if s.get("tool_calls")]
    for call in write_step["tool_calls"]:
        if call["arguments"]["path"].endswith("cell_2.py"):
            call["arguments"]["content"] = "y = (x +\n"
    script_path.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["run", str(chain_nb), "--mock-script", str(script_path), "--out", str(out)]) == 1
    assert "1 fallback substitution" in capsys.readouterr().err
    manifest = json.loads((out / ".codelift-manifest.json").read_text())
    subs = [e for e in manifest["enforcement"] if e["action"] == "fallback_content"]
    assert [e["path"] for e in subs] == ["src/chain/cells/cell_2.py"]


def test_missing_api_key_fails_fast(chain_nb, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("CODELIFT_NO_SUCH_KEY", raising=False)
    out = tmp_path / "out"
    code = main(
        [
            "run",
            str(chain_nb),
            "--out",
            str(out),
            "--endpoint-url",
            "http://model.invalid",
            "--model",
            "m",
            "--api-key-env",
            "CODELIFT_NO_SUCH_KEY",
        ]
    )
    assert code >= 2
    assert "CODELIFT_NO_SUCH_KEY" in capsys.readouterr().err
    assert not out.exists()


def test_run_config_errors(chain_nb, tmp_path, capsys):
    assert main(["run", str(chain_nb), "--out", str(tmp_path / "o")]) == 2
    out = tmp_path / "busy"
    out.mkdir()
    (out / "x").write_text("")
    script = _script_for(chain_nb, tmp_path)
    assert main(["run", str(chain_nb), "--mock-script", str(script), "--out", str(out)]) == 2
    assert "not empty" in capsys.readouterr().err


def test_run_from_config_file(chain_nb, tmp_path):
    script = _script_for(chain_nb, tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input_path": str(chain_nb), "out_dir": str(tmp_path / "o"), "mock_script_path": str(script)}))
    assert main(["run", "--config", str(cfg)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"surprise": 1}))
    assert main(["run", "--config", str(bad)]) == 2


def test_stage_failure_names_stage(chain_nb, tmp_path, capsys):
    script = tmp_path / "short.json"
    script.write_text(BackendScript([]).to_json())
    assert main(["run", str(chain_nb), "--mock-script", str(script), "--out", str(tmp_path / "o")]) == 2
    assert "stage architect failed (cell 1)" in capsys.readouterr().err


def test_empty_notebook_run(tmp_path, capsys):
    script = tmp_path / "s.json"
    script.write_text(BackendScript([]).to_json())
    nb = CORPUS / "many_tracebacks.ipynb"
    assert main(["run", str(nb), "--mock-script", str(script), "--out", str(tmp_path / "o")]) == 2
    assert "EmptyNotebook" in capsys.readouterr().err


def test_pipeline_api_returns_result(chain_nb, tmp_path):
    script = _script_for(chain_nb, tmp_path)
    result = run_pipeline(RunConfig(input_path=chain_nb, out_dir=tmp_path / "o", mock_script_path=script))
    assert result.exit_code == 0
    assert [o.cell_id for o in result.outcomes] == [1, 2]
    assert sorted(result.plan.entries)[0] == "src/chain/__init__.py"


def test_pipeline_failure_is_typed(chain_nb, tmp_path):
    script = tmp_path / "s.json"
    script.write_text(BackendScript([]).to_json())
    with pytest.raises(StageFailure) as info:
        run_pipeline(RunConfig(input_path=chain_nb, out_dir=tmp_path / "o", mock_script_path=script))
    assert info.value.stage == "architect"


def test_module_root_for():
    assert module_root_for("My Notebook.ipynb") == "my_notebook"
    assert module_root_for("2024-results.ipynb") == "nb_2024_results"
    assert module_root_for("---.ipynb") == "app"


def test_identity_script_command(chain_nb, tmp_path, capsys):
    assert main(["identity-script", str(chain_nb)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["strict"] is True
    assert len(doc["steps"]) == 2 + 2 + 3


# --------------------------------------------------------------------------
# offline guarantee


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise OSError("network disabled for this test")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.setattr(socket, "getaddrinfo", refuse)


@pytest.mark.parametrize("name", GOLDEN_NOTEBOOKS)
def test_offline_run_in_process(name, tmp_path, no_network):
    nb = CORPUS / name
    script = _script_for(nb, tmp_path)
    assert main(["run", str(nb), "--mock-script", str(script), "--out", str(tmp_path / "out")]) == 0


OFFLINE_RUNNER = """
import socket, sys
def refuse(*a, **k):
    raise OSError("network disabled")
socket.socket.connect = refuse
socket.socket.connect_ex = refuse
socket.create_connection = refuse
socket.getaddrinfo = refuse
from codelift.cli import main
sys.exit(main(sys.argv[1:]))
"""


def test_offline_run_subprocess(tmp_path):
    nb = CORPUS / "sales_analysis.ipynb"
    script = _script_for(nb, tmp_path)
    proc = subprocess.run(
        [sys.executable, "-c", OFFLINE_RUNNER, "run", str(nb), "--mock-script", str(script), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == ""
