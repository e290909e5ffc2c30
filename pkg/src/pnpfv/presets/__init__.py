"""Bundled example configurations (TOML files next to this module)."""
from __future__ import annotations

from pathlib import Path

from ..config import RunConfig, apply_overrides, load_document, parse_config

DIRECTORY = Path(__file__).resolve().parent


def names() -> list:
    return sorted(p.stem for p in DIRECTORY.glob("*.toml"))


def path(name: str) -> Path:
    p = DIRECTORY / f"{name}.toml"
    if not p.is_file():
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(names())}")
    return p


def load(name: str, n: int = None, order: int = None, tau: float = None, end: float = None,
         **overrides) -> RunConfig:
    """Load a bundled preset with optional grid size, order, step and end time."""
    doc = load_document(path(name))
    scheme = {1: "first", 2: "second"}.get(order)
    doc = apply_overrides(doc, tau=tau, grid=None if n is None else [n], scheme=scheme, **overrides)
    if end is not None:
        doc.setdefault("time", {})["end"] = float(end)
    return parse_config(doc)
