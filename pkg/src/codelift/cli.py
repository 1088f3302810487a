"""Command-line entry point (``codelift``).

Artifacts go to stdout (or ``--out``); diagnostics always go to stderr.
Exit codes: 0 success, 1 run finished with fallback substitutions,
2 for input, configuration or stage failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .analysis import LintConfig
from .developer import DeveloperLimits
from .errors import CodeliftError
from .graph import build_graph, export_graph
from .llm import EndpointConfig
from .pipeline import RunConfig, StageFailure, load_cells, module_root_for, run_pipeline
from .scripting import identity_script

logger = logging.getLogger("codelift")

CONFIG_KEYS = {
    "input_path",
    "out_dir",
    "base_url",
    "model",
    "api_key_env",
    "mock_script_path",
    "developer_max_rounds",
    "accept_score",
    "structure_max_rounds",
    "linter_cmd",
    "require_external",
    "lint_timeout_seconds",
    "trace",
    "root_module_name",
}


def _err(msg: str) -> None:
    print(f"codelift: {msg}", file=sys.stderr)


def _write(data: bytes, out) -> None:
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def cmd_ingest(args) -> int:
    try:
        nb, cells = load_cells(args.notebook)
    except (CodeliftError, OSError) as exc:
        _err(f"cannot ingest {args.notebook}: {exc}")
        return 2
    if args.json:
        data = json.dumps([c.to_dict() for c in cells], indent=2) + "\n"
    else:
        counts = nb.kind_counts()
        data = (
            f"{len(nb.cells)} cells (code={counts['code']}, markdown={counts['markdown']}, raw={counts['raw']}); "
            f"{len(cells)} code cells after cleaning\n"
        )
    _write(data.encode("utf-8"), args.out)
    return 0


def cmd_graph(args) -> int:
    try:
        _, cells = load_cells(args.notebook)
        g = build_graph(cells)
    except (CodeliftError, OSError) as exc:
        _err(f"cannot build graph for {args.notebook}: {type(exc).__name__}: {exc}")
        return 2
    _write(export_graph(g, args.format), args.out)
    return 0


def cmd_identity_script(args) -> int:
    try:
        _, cells = load_cells(args.notebook)
        limits = DeveloperLimits(
            max_rounds=args.max_rounds or DeveloperLimits.max_rounds,
            accept_score=Fraction(str(args.accept_score)) if args.accept_score is not None else Fraction(8),
        )
        root = args.root_name or module_root_for(args.notebook)
        script = identity_script(cells, limits, root_module_name=root)
    except (CodeliftError, OSError, ValueError) as exc:
        _err(f"cannot build script for {args.notebook}: {exc}")
        return 2
    _write(script.to_json().encode("utf-8"), args.out)
    return 0


def _merged_settings(args) -> dict:
    settings: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        settings.update(doc)
    flags = {
        "input_path": args.notebook,
        "out_dir": args.out,
        "base_url": args.endpoint_url,
        "model": args.model,
        "api_key_env": args.api_key_env,
        "mock_script_path": args.mock_script,
        "developer_max_rounds": args.max_rounds,
        "accept_score": args.accept_score,
        "structure_max_rounds": args.structure_max_rounds,
        "linter_cmd": args.linter_cmd,
        "root_module_name": args.root_name,
        "trace": True if args.trace else None,
    }
    settings.update({k: v for k, v in flags.items() if v is not None})
    return settings


def build_run_config(args) -> RunConfig:
    s = _merged_settings(args)
    if not s.get("input_path"):
        raise ValueError("no notebook given")
    if not s.get("out_dir"):
        raise ValueError("--out is required")
    endpoint = None
    if s.get("base_url") or s.get("model"):
        if not (s.get("base_url") and s.get("model")):
            raise ValueError("a live endpoint needs both --endpoint-url and --model")
        endpoint = EndpointConfig(
            base_url=s["base_url"], model=s["model"], api_key_env=s.get("api_key_env") or "OPENAI_API_KEY"
        )
    mock = s.get("mock_script_path")
    return RunConfig(
        input_path=Path(s["input_path"]),
        out_dir=Path(s["out_dir"]),
        endpoint=endpoint,
        mock_script_path=Path(mock) if mock else None,
        developer=DeveloperLimits(
            max_rounds=int(s.get("developer_max_rounds", 6)),
            accept_score=Fraction(str(s.get("accept_score", 8))),
        ),
        structure_max_rounds=int(s.get("structure_max_rounds", 12)),
        lint=LintConfig(
            linter_cmd=s.get("linter_cmd"),
            require_external=bool(s.get("require_external", False)),
            timeout_seconds=float(s.get("lint_timeout_seconds", 30)),
        ),
        trace=bool(s.get("trace", False)),
        root_module_name=s.get("root_module_name"),
    )


def cmd_run(args) -> int:
    try:
        config = build_run_config(args)
        config.check()
    except (ValueError, OSError, CodeliftError) as exc:
        _err(f"invalid configuration: {exc}")
        return 2
    try:
        result = run_pipeline(config)
    except StageFailure as exc:
        cell = getattr(exc.cause, "cell_id", None)
        where = f" (cell {cell})" if cell is not None else ""
        cause = getattr(exc.cause, "cause", exc.cause)
        _err(f"stage {exc.stage} failed{where}: {type(cause).__name__}: {cause}")
        return 2
    except (CodeliftError, OSError) as exc:
        _err(f"run failed: {type(exc).__name__}: {exc}")
        return 2
    subs = result.repo.substitutions
    if subs:
        _err(f"completed with {subs} fallback substitution(s); see .codelift-manifest.json")
    else:
        logger.info("emitted %d files to %s", len(result.repo.manifest), config.out_dir)
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codelift", description="Turn a Jupyter notebook into a Python code base.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and clean a notebook")
    p.add_argument("notebook")
    p.add_argument("--json", action="store_true", help="print cleaned cells as JSON")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("graph", help="export the cell dependency graph")
    p.add_argument("notebook")
    p.add_argument("--format", choices=("dot", "json"), default="json")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("run", help="run the full transformation pipeline")
    p.add_argument("notebook", nargs="?")
    p.add_argument("--out", help="output directory (must be empty or absent)")
    p.add_argument("--config", help="flat JSON config; flags take precedence")
    p.add_argument("--endpoint-url")
    p.add_argument("--model")
    p.add_argument("--api-key-env", help="environment variable holding the API key (default OPENAI_API_KEY)")
    p.add_argument("--mock-script", help="replay a JSON backend script instead of calling a model")
    p.add_argument("--accept-score", type=float)
    p.add_argument("--max-rounds", type=int, help="developer validation rounds per cell")
    p.add_argument("--structure-max-rounds", type=int)
    p.add_argument("--linter-cmd", help="external linter, e.g. 'pylint --persistent=n'")
    p.add_argument("--root-name", help="package name of the emitted code")
    p.add_argument("--trace", action="store_true", help="write model transcripts to <out>/.codelift-trace/")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("identity-script", help="write a replay script that leaves every cell unchanged")
    p.add_argument("notebook")
    p.add_argument("--out")
    p.add_argument("--accept-score", type=float)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--root-name")
    p.set_defaults(func=cmd_identity_script)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and not args.notebook and not args.config:
        parser.error("run needs a notebook path or --config")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
