import json
import random
from pathlib import Path

import pytest

from codelift.notebook import CleanCell

CORPUS = Path(__file__).parent / "corpus"

# Notebooks that must go through the whole offline pipeline with exit 0.
GOLDEN_NOTEBOOKS = ["sales_analysis.ipynb", "test4.ipynb", "test4.5.ipynb"]
ALL_NOTEBOOKS = sorted(p.name for p in CORPUS.glob("*.ipynb"))


def notebook_bytes(cells, minor=5) -> bytes:
    """Build an nbformat v4 document from ``(kind, source)`` pairs."""
    out = []
    for kind, source in cells:
        cell = {"cell_type": kind, "metadata": {}, "source": source}
        if kind == "code":
            cell["execution_count"] = None
            cell["outputs"] = []
        out.append(cell)
    doc = {"cells": out, "metadata": {}, "nbformat": 4, "nbformat_minor": minor}
    return json.dumps(doc).encode("utf-8")


def clean(*sources) -> list[CleanCell]:
    """CleanCells with ids 0..n-1 from raw Python sources."""
    return [CleanCell(index=i, source=s) for i, s in enumerate(sources)]


NAME_POOL = [f"v{i}" for i in range(10)]


def random_cells(rng: random.Random, n_cells: int, pool=NAME_POOL) -> list[tuple[str, set, set]]:
    """Random cells of assignments, function defs and imports over ``pool``.

    Returns ``(source, defined, used)`` per cell. The two name sets are
    tracked while writing each statement, so they do not depend on the
    analyzer under test.
    """
    cells = []
    for _ in range(n_cells):
        stmts, defined, used, deferred = [], set(), set(), set()

        def read(*names):
            used.update(n for n in names if n not in defined)

        for _ in range(rng.randint(1, 4)):
            kind = rng.choice(["assign", "assign", "def", "import", "use", "aug"])
            a, b, c = rng.sample(pool, 3)
            if kind == "assign":
                if rng.random() < 0.6:
                    stmts.append(f"{a} = {b} + {c}")
                    read(b, c)
                else:
                    stmts.append(f"{a} = {rng.randint(0, 9)}")
                defined.add(a)
            elif kind == "def":
                stmts.append(f"def {a}(p):\n    return p + {b}")
                deferred.add(b)
                defined.add(a)
            elif kind == "import":
                stmts.append(f"import math as {a}")
                defined.add(a)
            elif kind == "aug":
                stmts.append(f"{a} += {b}")
                read(a, b)
                defined.add(a)
            else:
                stmts.append(f"print({a}, {b})")
                read("print", a, b)
        used |= deferred - defined
        cells.append(("\n".join(stmts), defined, used))
    return cells


@pytest.fixture
def corpus():
    return CORPUS
