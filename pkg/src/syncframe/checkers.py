"""Correctness oracles over histories and registers.

The linearizability check is an exhaustive search over operation orders with
memoized pruning, bounded to small histories. All checkers are pure: same
inputs, same verdicts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .model import (
    EMPTY_PROJECTION,
    EventKind,
    History,
    ProjectionKind,
    Register,
    project,
)
from .mechanisms.render import render_value

MAX_LIN_OPS = 12


class CheckerError(Exception):
    pass


class TooLarge(CheckerError):
    pass


class Outcome(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    checker: str
    witness: Optional[str] = None

    def __post_init__(self) -> None:
        if self.outcome is Outcome.FAIL and not self.witness:
            raise CheckerError("failing verdict requires a witness")

    @property
    def passed(self) -> bool:
        return self.outcome is Outcome.PASS

    def line(self) -> str:
        return f"{self.outcome.value}|{self.checker}|{self.witness or ''}"


@dataclass(frozen=True)
class LinOp:
    op_id: tuple[int, int]
    kind: str  # write | read
    value: Optional[str]
    invoke: int
    respond: Optional[int]  # None while pending
    result: Optional[str] = None


def extract_lin_ops(history: History) -> list[LinOp]:
    """Client write/read operations with their invoke/respond times."""
    invokes = {}
    for e in history:
        if e.kind is EventKind.INVOKE and e.op.kind in ("write", "read"):
            invokes[e.op.op_id] = e
    responses = history.responses()
    ops = []
    for op_id, ev in sorted(invokes.items()):
        resp = responses.get(op_id)
        result = None
        if resp is not None and resp.result.startswith("read:"):
            result = resp.result[len("read:"):]
        ops.append(LinOp(
            op_id=op_id,
            kind=ev.op.kind,
            value=ev.op.value,
            invoke=ev.time,
            respond=resp.time if resp is not None else None,
            result=result,
        ))
    return ops


class _Model:
    """Sequential register the search replays candidate orders against."""

    def __init__(self, kind: ProjectionKind):
        self.kind = kind
        self.sum = 0
        self.last: object = EMPTY_PROJECTION
        self.values: tuple = ()

    def key(self):
        if self.kind is ProjectionKind.SUM:
            return self.sum
        if self.kind is ProjectionKind.LAST_WRITE:
            return self.last
        return self.values

    def apply_write(self, value: str) -> None:
        self.last = value
        if self.kind is ProjectionKind.SUM:
            self.sum += int(value)
        self.values = self.values + (value,)

    def read_result(self) -> str:
        if self.kind is ProjectionKind.SUM:
            return str(self.sum)
        if self.kind is ProjectionKind.LAST_WRITE:
            return render_value(self.last)
        if self.kind is ProjectionKind.SET_UNION:
            return render_value(frozenset(self.values))
        return render_value(self.values)

    def clone(self) -> "_Model":
        m = _Model(self.kind)
        m.sum = self.sum
        m.last = self.last
        m.values = self.values
        return m


def check_linearizable(history: History, projection: ProjectionKind) -> Verdict:
    """Search for a total order consistent with real time in which every
    read returns the projection of the writes before it."""
    ops = extract_lin_ops(history)
    if len(ops) > MAX_LIN_OPS:
        raise TooLarge(f"{len(ops)} operations exceed the {MAX_LIN_OPS}-op search bound")
    # Unanswered reads constrain nothing; drop them up front.
    ops = [o for o in ops if not (o.kind == "read" and o.respond is None)]

    seen: set = set()
    order: list[LinOp] = []

    def respond_time(o: LinOp) -> float:
        return o.respond if o.respond is not None else float("inf")

    def search(remaining: frozenset, model: _Model) -> bool:
        if not remaining:
            return True
        state = (remaining, model.key())
        if state in seen:
            return False
        rem_ops = [o for o in ops if o.op_id in remaining]
        horizon = min(respond_time(o) for o in rem_ops)
        for cand in rem_ops:
            if cand.invoke > horizon:
                continue  # someone responded before this one was invoked
            rest = remaining - {cand.op_id}
            if cand.kind == "write":
                if cand.respond is None:
                    # A pending write may have missed entirely: omit it.
                    if search(rest, model):
                        return True
                primed = model.clone()
                primed.apply_write(cand.value)
                order.append(cand)
                if search(rest, primed):
                    return True
                order.pop()
            else:
                if model.read_result() != cand.result:
                    continue
                order.append(cand)
                if search(rest, model):
                    return True
                order.pop()
        seen.add(state)
        return False

    all_ids = frozenset(o.op_id for o in ops)
    if search(all_ids, _Model(projection)):
        witness = " -> ".join(
            f"{o.kind[0]}{o.op_id}" + (f"={o.result}" if o.kind == "read" else f":{o.value}")
            for o in order
        )
        return Verdict(Outcome.PASS, "linearizable", witness)
    reads = {o.result for o in ops if o.kind == "read"}
    writes = {o.value for o in ops if o.kind.startswith("write")}
    never_written = {r for r in reads if r not in writes and r not in ("<empty>",)}
    hint = f"value never written: {sorted(never_written)}" if never_written else "no consistent order exists"
    return Verdict(Outcome.FAIL, "linearizable", hint)


def replay_witness(history: History, projection: ProjectionKind, witness: str) -> bool:
    """Re-run a passing witness order sequentially; every read must match."""
    ops = {o.op_id: o for o in extract_lin_ops(history)}
    model = _Model(projection)
    for token in witness.split(" -> "):
        kind_flag = token[0]
        body = token[1:]
        id_part, _, payload = body.partition("=" if kind_flag == "r" else ":")
        op_id = tuple(int(x) for x in id_part.strip("()").split(", "))
        op = ops[op_id]
        if kind_flag == "w":
            model.apply_write(op.value)
        else:
            if model.read_result() != payload:
                return False
    return True


def check_sec(replicas: list[Register], delivered: list[frozenset]) -> Verdict:
    """Replicas with equal delivered sets must have equal projections."""
    if len(replicas) != len(delivered):
        raise CheckerError("each replica needs its delivered set")
    pending = []
    for i in range(len(replicas)):
        for j in range(i + 1, len(replicas)):
            if delivered[i] != delivered[j]:
                pending.append((replicas[i].replica_id, replicas[j].replica_id))
                continue
            pi, pj = project(replicas[i]), project(replicas[j])
            if isinstance(pi, tuple):
                pi = frozenset(pi)  # delivery order is not part of the contract
            if isinstance(pj, tuple):
                pj = frozenset(pj)
            if pi != pj:
                return Verdict(
                    Outcome.FAIL, "sec",
                    f"replicas {replicas[i].replica_id},{replicas[j].replica_id}: "
                    f"{render_value(pi)} vs {render_value(pj)}",
                )
    note = f"pending delivery: {pending}" if pending else None
    return Verdict(Outcome.PASS, "sec", note)


def detect_split_brain(registers: list[Register], live: set[int]) -> Verdict:
    """Committed series among live replicas must be prefix-compatible."""
    alive = [r for r in registers if r.replica_id in live]
    for i in range(len(alive)):
        for j in range(i + 1, len(alive)):
            a, b = alive[i].series, alive[j].series
            for x, y in zip(a, b):
                if x.op_id != y.op_id:
                    return Verdict(
                        Outcome.FAIL, "split_brain",
                        f"replicas {alive[i].replica_id},{alive[j].replica_id} diverge: "
                        f"{render_value(project(alive[i]))} vs {render_value(project(alive[j]))}",
                    )
    return Verdict(Outcome.PASS, "split_brain")


def detect_progress(history: History, workload_size: int, horizon_ticks: int) -> Verdict:
    """Every injected operation must be answered by the horizon."""
    invoked = {e.op.op_id: e for e in history if e.kind is EventKind.INVOKE}
    responses = history.responses()
    stuck = sorted(
        op_id for op_id in invoked
        if op_id not in responses or responses[op_id].time > horizon_ticks
    )
    if len(invoked) < workload_size:
        missing = workload_size - len(invoked)
        return Verdict(Outcome.FAIL, "progress", f"{missing} operations never invoked")
    if stuck:
        return Verdict(Outcome.FAIL, "progress", f"stuck operations: {stuck}")
    return Verdict(Outcome.PASS, "progress")
