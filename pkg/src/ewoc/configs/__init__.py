"""Built-in trial configurations shipped with the package."""

from __future__ import annotations

import json
from importlib import resources

from ..trial import TrialConfig, config_from_dict

__all__ = ["builtin_names", "load_builtin"]


def builtin_names() -> list[str]:
    pkg = resources.files(__name__)
    return sorted(p.name.removesuffix(".json") for p in pkg.iterdir()
                  if p.name.endswith(".json"))


def load_builtin(name: str) -> TrialConfig:
    """Load and validate one of the shipped configurations (e.g. ``r115777``)."""
    path = resources.files(__name__).joinpath(f"{name}.json")
    return config_from_dict(json.loads(path.read_text()))
