"""Shared helpers for protocol nodes: quorum arithmetic, wire encoding,
priority trees."""

from __future__ import annotations

from typing import Optional

from ..model import Metadata, WriteOp


class MechanismError(Exception):
    pass


class UnknownCase(MechanismError):
    pass


def majority(n: int) -> int:
    # ceil((n+1)/2)
    return n // 2 + 1


def minority(n: int) -> int:
    return (n - 1) // 2


def fast_quorum(n: int, rule: str = "floor") -> int:
    # floor(3n/4) by default; the ceiling variant is available as an override.
    if rule == "floor":
        return (3 * n) // 4
    if rule == "ceil":
        return -((-3 * n) // 4)
    raise MechanismError(f"unknown fast quorum rule {rule!r}")


def write_to_wire(w: WriteOp) -> dict:
    wire: dict = {"w": w.writer_id, "s": w.op_seq, "v": w.value}
    m = w.meta
    if not m.is_empty():
        meta: dict = {}
        if m.ballot is not None:
            meta["ballot"] = m.ballot
        if m.logical_time is not None:
            meta["lt"] = m.logical_time
        if m.deps is not None:
            meta["deps"] = sorted(list(p) for p in m.deps)
        if m.priority is not None:
            meta["prio"] = m.priority
        if m.view is not None:
            meta["view"] = m.view
        wire["m"] = meta
    return wire


def wire_to_write(wire: dict) -> WriteOp:
    meta = wire.get("m") or {}
    deps = meta.get("deps")
    return WriteOp(
        writer_id=wire["w"],
        op_seq=wire["s"],
        value=wire["v"],
        meta=Metadata(
            ballot=meta.get("ballot"),
            logical_time=meta.get("lt"),
            deps=None if deps is None else frozenset(tuple(p) for p in deps),
            priority=meta.get("prio"),
            view=meta.get("view"),
        ),
    )


class PriorityTree:
    """Pre-assigned writer hierarchy used for local conflict resolution.

    Ancestors beat descendants; writers with no ancestor relation are
    siblings and fall back to lowest-writer-id-first.
    """

    def __init__(self, parent: dict[int, Optional[int]]) -> None:
        self.parent = dict(parent)
        roots = [w for w, p in self.parent.items() if p is None]
        if not roots:
            raise MechanismError("priority tree needs at least one root")
        self._depth: dict[int, int] = {}
        for w in self.parent:
            seen = set()
            depth = 0
            cur: Optional[int] = w
            while self.parent.get(cur) is not None:
                if cur in seen:
                    raise MechanismError("priority tree contains a cycle")
                seen.add(cur)
                cur = self.parent[cur]
                depth += 1
            self._depth[w] = depth

    @classmethod
    def chain(cls, n: int) -> "PriorityTree":
        """0 is the root, each writer i+1 hangs under i."""
        return cls({0: None, **{i: i - 1 for i in range(1, n)}})

    def is_ancestor(self, a: int, b: int) -> bool:
        cur = self.parent.get(b)
        while cur is not None:
            if cur == a:
                return True
            cur = self.parent.get(cur)
        return False

    def depth(self, w: int) -> int:
        return self._depth.get(w, 0)

    def sort_key(self, writer_id: int) -> tuple[int, int]:
        # Ancestors have strictly smaller depth, so ordering by (depth, id)
        # always places an ancestor before any of its descendants.
        return (self.depth(writer_id), writer_id)

    def to_parent_map(self) -> dict[int, Optional[int]]:
        return dict(self.parent)
