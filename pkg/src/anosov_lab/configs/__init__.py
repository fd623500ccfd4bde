"""Bundled experiment configurations."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

__all__ = ["bundled_config_paths", "bundled_config_path"]


def bundled_config_paths() -> dict[str, Path]:
    root = resources.files(__name__)
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def bundled_config_path(name: str) -> Path:
    paths = bundled_config_paths()
    if name not in paths:
        raise KeyError(f"no bundled config {name!r}; available: {', '.join(sorted(paths))}")
    return paths[name]
