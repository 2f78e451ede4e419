"""Domain types for the convergence framework.

Writes, registers, projections, quorums, pass traces and the five-property
profile. Pure values only; no protocol logic lives here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional


class ModelError(Exception):
    pass


class DuplicateCommit(ModelError):
    pass


class InsufficientData(ModelError):
    pass


class Stage(str, enum.Enum):
    PRE = "pre"
    EXE = "exe"


class ProjectionKind(str, enum.Enum):
    LAST_WRITE = "last_write"
    SUM = "sum"
    SET_UNION = "set_union"
    LOG_SEQUENCE = "log_sequence"


class Consistency(str, enum.Enum):
    LINEARIZABLE = "linearizable"
    SEQUENTIAL = "sequential"
    EVENTUAL = "eventual"


class ArbiterKind(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    NONE = "none"


class _EmptyProjection:
    """Distinguished result of projecting an empty series under LAST_WRITE."""

    def __repr__(self) -> str:
        return "<empty>"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, _EmptyProjection)

    def __hash__(self) -> int:
        return hash("_EmptyProjection")


EMPTY_PROJECTION = _EmptyProjection()

# Valid walks through the stage diagram for one pass of synchronization.
VALID_PATHS = (
    (Stage.PRE,),
    (Stage.PRE, Stage.EXE),
    (Stage.EXE,),
)


@dataclass(frozen=True)
class Metadata:
    """Coordination payload attached to a write.

    All fields optional; a metadata-only write must carry at least one.
    """

    ballot: Optional[int] = None
    logical_time: Optional[int] = None
    deps: Optional[frozenset[tuple[int, int]]] = None
    priority: Optional[int] = None
    view: Optional[int] = None

    def is_empty(self) -> bool:
        return (
            self.ballot is None
            and self.logical_time is None
            and self.deps is None
            and self.priority is None
            and self.view is None
        )


@dataclass(frozen=True)
class WriteOp:
    """One write: an opaque value plus coordination metadata.

    ``value`` of ``None`` is the null value (a metadata-only write, e.g. a
    ballot or leader-change marker); it is distinct from an empty string.
    """

    writer_id: int
    op_seq: int
    value: Optional[str]
    meta: Metadata = field(default_factory=Metadata)

    def __post_init__(self) -> None:
        if self.writer_id < 0 or self.op_seq < 0:
            raise ModelError("writer_id and op_seq must be non-negative")
        if self.value is None and self.meta.is_empty():
            raise ModelError("null-valued write requires non-empty metadata")

    @property
    def op_id(self) -> tuple[int, int]:
        return (self.writer_id, self.op_seq)

    def is_null(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class Register:
    """Append-only committed series owned by one replica."""

    replica_id: int
    projection: ProjectionKind
    series: tuple[WriteOp, ...] = ()

    def __len__(self) -> int:
        return len(self.series)


def append_committed(register: Register, w: WriteOp) -> Register:
    """Return a new register with ``w`` appended to the committed series."""
    for existing in register.series:
        if existing.op_id == w.op_id:
            raise DuplicateCommit(f"write {w.op_id} already committed")
    return Register(register.replica_id, register.projection, register.series + (w,))


def project(register: Register):
    """Apply the register's projection to its committed series. Pure."""
    series = register.series
    kind = register.projection
    if kind is ProjectionKind.LAST_WRITE:
        if not series:
            return EMPTY_PROJECTION
        return series[-1].value
    if kind is ProjectionKind.SUM:
        return sum(int(w.value) for w in series if w.value is not None)
    if kind is ProjectionKind.SET_UNION:
        return frozenset(w.value for w in series if w.value is not None)
    if kind is ProjectionKind.LOG_SEQUENCE:
        return tuple(w.value for w in series)
    raise ModelError(f"unknown projection {kind}")


@dataclass(frozen=True)
class Quorum:
    """The set of writers communicated with in one round of a stage."""

    members: frozenset[int]
    stage: Stage

    def __post_init__(self) -> None:
        if not self.members:
            raise ModelError("quorum must be non-empty")
        if any(m < 0 for m in self.members):
            raise ModelError("quorum members must be non-negative writer ids")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class PassTrace:
    """One completed pass of synchronization.

    ``case`` labels which of the mechanism's table cases the pass exercised
    (e.g. "fast"/"slow", "electing"/"elected"; "-" when the table cell has no
    qualifier). Round trips are counted in message rounds; a one-way message
    with no awaited reply counts 0.5.
    """

    pass_index: int
    path: tuple[Stage, ...]
    rtts_per_stage: Mapping[Stage, float]
    quorums: tuple[Quorum, ...]
    converged: frozenset[WriteOp]
    aborted: frozenset[WriteOp] = frozenset()
    arbiter_kind: ArbiterKind = ArbiterKind.NONE
    case: str = "-"

    def __post_init__(self) -> None:
        if self.path not in VALID_PATHS:
            raise ModelError(f"invalid stage path {self.path}")
        if not self.converged:
            raise ModelError("completed pass must converge at least one write")
        if self.converged & self.aborted:
            raise ModelError("converged and aborted sets must be disjoint")
        for stage, rtts in self.rtts_per_stage.items():
            if rtts < 0 or (rtts * 2) != int(rtts * 2):
                raise ModelError(f"rtts must be a non-negative multiple of 0.5, got {rtts}")
            if stage not in self.path:
                raise ModelError(f"rtts recorded for stage {stage} not on path")

    @property
    def total_rtts(self) -> float:
        return sum(self.rtts_per_stage.values())


@dataclass(frozen=True)
class MechanismProfile:
    """Five-property summary of a mechanism, one comparison-table row."""

    consistency: Consistency
    writing_freedom: int
    latency_rtt: Mapping[str, float]
    loading: Mapping[str, int]
    fault_tolerance: int

    def validate(self, n: int, shared_memory_exempt: bool = False) -> None:
        if not 1 <= self.writing_freedom <= n:
            raise ModelError(f"writing freedom {self.writing_freedom} outside [1, {n}]")
        if self.fault_tolerance > n - 1:
            raise ModelError(f"fault tolerance {self.fault_tolerance} exceeds n-1")
        if self.consistency is Consistency.LINEARIZABLE and not shared_memory_exempt:
            if self.fault_tolerance > (n - 1) // 2:
                raise ModelError("linearizable mechanism exceeds the minority fault bound")


class EventKind(str, enum.Enum):
    INVOKE = "invoke"
    RESPOND = "respond"
    COMMIT = "commit"


@dataclass(frozen=True)
class ClientOp:
    """A client-visible operation issued at one writer."""

    writer_id: int
    client_seq: int
    kind: str  # write | read | cas | remove
    key: str
    value: Optional[str]
    extra: Optional[int] = None  # cas expected length

    @property
    def op_id(self) -> tuple[int, int]:
        return (self.writer_id, self.client_seq)


@dataclass(frozen=True)
class Event:
    time: int
    replica_id: int
    kind: EventKind
    op: Optional[ClientOp] = None
    result: Optional[str] = None
    write: Optional[WriteOp] = None


class History:
    """Global timeline of invocations, responses and commits."""

    def __init__(self) -> None:
        self.events: list[Event] = []
        self._invoked: set[tuple[int, int]] = set()

    def append(self, event: Event) -> None:
        if self.events and event.time < self.events[-1].time:
            raise ModelError("history times must be non-decreasing")
        if event.kind is EventKind.INVOKE:
            self._invoked.add(event.op.op_id)
        elif event.kind is EventKind.RESPOND:
            if event.op.op_id not in self._invoked:
                raise ModelError(f"respond without invoke for {event.op.op_id}")
        self.events.append(event)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def invokes(self) -> list[Event]:
        return [e for e in self.events if e.kind is EventKind.INVOKE]

    def responses(self) -> dict[tuple[int, int], Event]:
        return {e.op.op_id: e for e in self.events if e.kind is EventKind.RESPOND}


def classify_consistency(traces: Iterable[PassTrace], per_writer_ordered: bool) -> Consistency:
    """Grade consistency from converged-set sizes across completed passes.

    Size 1 everywhere means total order; larger sets demote to sequential
    when no writer ever has two writes in one pass (and per-writer order is
    attested), otherwise eventual.
    """
    traces = list(traces)
    if not traces:
        raise InsufficientData("no completed passes to classify")
    if all(len(t.converged) == 1 for t in traces):
        return Consistency.LINEARIZABLE
    co_resident = False
    for t in traces:
        writers = [w.writer_id for w in t.converged]
        if len(writers) != len(set(writers)):
            co_resident = True
            break
    if not co_resident and per_writer_ordered:
        return Consistency.SEQUENTIAL
    return Consistency.EVENTUAL
