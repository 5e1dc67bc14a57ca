"""Versioned prompt and criteria files shipped with the package."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any


@lru_cache(maxsize=None)
def load_text(name: str) -> str:
    return resources.files("crisistriage").joinpath("resources", name).read_text(encoding="utf-8")


def load_json(name: str) -> Any:
    return json.loads(load_text(name))
