"""Access to the prompt catalog shipped with the package."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def catalog() -> dict:
    return json.loads(resources.files(__package__).joinpath("prompts.json").read_text(encoding="utf-8"))


def prompt(name: str, **values) -> str:
    text = catalog()[name]
    return text.format(**values) if values else text
