"""Canonical text rendering of projection results, shared by read paths."""

from __future__ import annotations

from ..model import EMPTY_PROJECTION, ProjectionKind, Register, project
from .base import wire_to_write


def render_value(value) -> str:
    if value == EMPTY_PROJECTION:
        return "<empty>"
    if isinstance(value, frozenset):
        return "{" + ",".join(sorted(str(v) for v in value)) + "}"
    if isinstance(value, tuple):
        return "[" + ",".join(str(v) for v in value) + "]"
    return str(value)


def render_series(kind: ProjectionKind, series_wire: list[dict]) -> str:
    reg = Register(0, kind, tuple(wire_to_write(w) for w in series_wire))
    return render_value(project(reg))


def render_register(reg: Register) -> str:
    return render_value(project(reg))
