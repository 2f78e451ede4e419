"""Deterministic discrete-event network simulator.

Hosts n writer processes exchanging opaque messages with seeded delays,
drops, partitions and crash/recover fault plans. The event loop is strictly
single-threaded; identical configs produce bit-identical traces and digests.

Event ordering at a tick: fault actions, then client injections, then
message deliveries in (src, dst, per-sender sequence) order, then timers in
(node, timer sequence) order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .model import (
    ClientOp,
    Event,
    EventKind,
    History,
    ModelError,
    PassTrace,
    ProjectionKind,
    Register,
    WriteOp,
    append_committed,
)
from .rng import FNV_OFFSET, SplitMix64, fnv1a64


class SimError(Exception):
    pass


class SimTimeout(SimError):
    """Raised by step() when the next event lies beyond max_ticks."""


class NothingPending(SimError):
    """Raised by step() when the event queue is empty (quiescence)."""


class FaultPlanError(SimError):
    pass


@dataclass(frozen=True)
class FaultEvent:
    tick: int
    action: str  # crash | recover | partition | heal
    writer: Optional[int] = None
    groups: Optional[tuple[frozenset[int], ...]] = None


@dataclass(frozen=True)
class FaultPlan:
    events: tuple[FaultEvent, ...] = ()

    def validate(self, n: int) -> None:
        crashed: set[int] = set()
        for ev in sorted(self.events, key=lambda e: e.tick):
            if ev.action == "crash":
                if ev.writer is None or not 0 <= ev.writer < n:
                    raise FaultPlanError(f"crash target {ev.writer} outside [0, {n})")
                if ev.writer in crashed:
                    raise FaultPlanError(f"crash of already-crashed writer {ev.writer}")
                crashed.add(ev.writer)
            elif ev.action == "recover":
                if ev.writer not in crashed:
                    raise FaultPlanError(f"recover of live writer {ev.writer}")
                crashed.discard(ev.writer)
            elif ev.action == "partition":
                if not ev.groups:
                    raise FaultPlanError("partition without groups")
                seen: set[int] = set()
                for g in ev.groups:
                    if seen & g:
                        raise FaultPlanError("partition groups overlap")
                    seen |= g
                if seen != set(range(n)):
                    raise FaultPlanError("partition groups must cover all writers")
            elif ev.action == "heal":
                pass
            else:
                raise FaultPlanError(f"unknown fault action {ev.action}")


@dataclass(frozen=True)
class SimConfig:
    n: int
    seed: int = 0
    min_delay: int = 1
    max_delay: int = 1
    drop_prob: float = 0.0
    fault_plan: FaultPlan = field(default_factory=FaultPlan)
    max_ticks: int = 100_000

    def validate(self) -> None:
        if self.n < 1:
            raise SimError("need at least one writer")
        if not 1 <= self.min_delay <= self.max_delay:
            raise SimError("delays must satisfy 1 <= min_delay <= max_delay")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise SimError("drop_prob outside [0, 1]")
        if self.max_ticks < 1:
            raise SimError("max_ticks must be positive")
        self.fault_plan.validate(self.n)


@dataclass(frozen=True)
class Envelope:
    src: int
    dst: int
    payload: dict
    send_tick: int
    deliver_tick: int


@dataclass(frozen=True)
class WorkItem:
    """One client request scheduled for injection at a writer."""

    writer_id: int
    issue_tick: int
    kind: str = "write"  # write | read | cas | remove
    key: str = "k"
    value: Optional[str] = None
    expected: Optional[int] = None  # cas only


class MechanismNode:
    """Base class for protocol state machines driven by the simulator.

    Instances are recreated on recovery; anything that must survive a crash
    belongs in ``ctx.durable``.
    """

    def __init__(self, ctx: "NodeCtx") -> None:
        self.ctx = ctx

    def on_start(self) -> None:
        pass

    def on_client_request(self, op: ClientOp) -> None:
        raise NotImplementedError

    def on_message(self, src: int, msg: dict) -> None:
        raise NotImplementedError

    def on_timer(self, payload: dict) -> None:
        pass

    def on_recover(self) -> None:
        pass

    def on_finish(self) -> None:
        pass

    def delivered_ops(self) -> Optional[frozenset]:
        return None


# Event lanes; lower runs first within a tick.
_LANE_FAULT = 0
_LANE_INJECT = 1
_LANE_DELIVER = 2
_LANE_TIMER = 3

_SUMMARY_KEYS = (
    "slot", "ballot", "term", "view", "opnum", "inst", "key",
    "expected", "op", "case", "len",
)


def summarize(payload: dict) -> str:
    parts = [str(payload.get("t", "?"))]
    for k in _SUMMARY_KEYS:
        if k in payload:
            parts.append(f"{k}={payload[k]}")
    return " ".join(parts)


class NodeCtx:
    """Capabilities handed to a mechanism node by the simulator."""

    def __init__(self, world: "World", node_id: int, register_index: Optional[int]) -> None:
        self._world = world
        self.node_id = node_id
        self.register_index = register_index

    @property
    def n(self) -> int:
        return self._world.config.n

    @property
    def now(self) -> int:
        return self._world.clock

    @property
    def durable(self) -> dict:
        return self._world.durable[self.node_id]

    @property
    def params(self) -> dict:
        return self._world.params

    def writers(self) -> range:
        return range(self._world.config.n)

    def send(self, dst: int, payload: dict) -> None:
        self._world._send(self.node_id, dst, payload)

    def broadcast(self, dsts, payload: dict) -> None:
        for dst in sorted(dsts):
            self._world._send(self.node_id, dst, payload)

    def set_timer(self, delay: int, payload: dict) -> None:
        self._world._set_timer(self.node_id, delay, payload)

    def rand_range(self, lo: int, hi: int) -> int:
        return self._world.rng.randrange(lo, hi)

    def register(self) -> Register:
        return self._world.registers[self.register_index]

    def commit(self, write: WriteOp) -> None:
        self._world._commit(self.node_id, self.register_index, write)

    def respond(self, op: ClientOp, result: str) -> None:
        self._world._respond(self.node_id, op, result)

    def emit_pass(self, **fields) -> None:
        self._world._emit_pass(self.node_id, **fields)

    def log(self, kind: str, detail: str = "") -> None:
        self._world._trace(kind, self.node_id, None, detail)


@dataclass
class RunResult:
    history: History
    passes: list[PassTrace]
    digest: str
    trace_lines: list[str]
    registers: list[Register]
    timed_out: bool
    unfinished: list[ClientOp]
    delivered: Optional[list[frozenset]] = None


class World:
    """One simulation instance: nodes, registers, clock and event queue."""

    def __init__(
        self,
        config: SimConfig,
        node_factory: Callable[[NodeCtx], MechanismNode],
        workload: list[WorkItem],
        projection: ProjectionKind = ProjectionKind.LOG_SEQUENCE,
        params: Optional[dict] = None,
        shared_register: bool = False,
        memory_factory: Optional[Callable[[NodeCtx], MechanismNode]] = None,
    ) -> None:
        config.validate()
        for item in workload:
            if not 0 <= item.writer_id < config.n:
                raise SimError(f"workload writer {item.writer_id} outside [0, {config.n})")
            if item.issue_tick >= config.max_ticks:
                raise SimError("workload issue_tick beyond max_ticks")
        self.config = config
        self.params = dict(params or {})
        self.clock = 0
        self.rng = SplitMix64(config.seed)
        self.history = History()
        self.passes: list[PassTrace] = []
        self.trace_lines: list[str] = []
        self._digest = FNV_OFFSET
        self.timed_out = False

        n = config.n
        if shared_register:
            self.registers = [Register(0, projection)]
            reg_for = lambda i: 0  # noqa: E731
        else:
            self.registers = [Register(i, projection) for i in range(n)]
            reg_for = lambda i: i  # noqa: E731

        self.durable: dict[int, dict] = {i: {} for i in range(n)}
        self.live = [True] * n
        self.epoch = [0] * n
        self.partition: Optional[tuple[frozenset[int], ...]] = None
        self._mailbox: dict[int, list[ClientOp]] = {i: [] for i in range(n)}
        self._client_seq = [0] * n
        self._responded: set[tuple[int, int]] = set()
        self._pending_ops: dict[tuple[int, int], ClientOp] = {}

        self._heap: list[tuple] = []
        self._seq = 0
        self._send_seq = [0] * (n + 1)
        self._node_factory = node_factory

        self.nodes: dict[int, MechanismNode] = {}
        for i in range(n):
            ctx = NodeCtx(self, i, reg_for(i))
            self.nodes[i] = node_factory(ctx)
        self.memory_id: Optional[int] = None
        if memory_factory is not None:
            self.memory_id = n
            self.durable[n] = {}
            self.nodes[n] = memory_factory(NodeCtx(self, n, 0))

        for idx, ev in enumerate(sorted(config.fault_plan.events, key=lambda e: (e.tick,))):
            self._push(ev.tick, _LANE_FAULT, (idx, 0, 0), ("fault", ev))
        for idx, item in enumerate(workload):
            self._push(item.issue_tick, _LANE_INJECT, (idx, 0, 0), ("inject", item))
        for node in self.nodes.values():
            node.on_start()

    # -- queue plumbing --

    def _push(self, tick: int, lane: int, key: tuple, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (tick, lane, key, self._seq, payload))

    def _trace(self, kind: str, src, dst, detail: str) -> None:
        line = f"{self.clock}|{kind}|{'-' if src is None else src}|{'-' if dst is None else dst}|{detail}"
        self.trace_lines.append(line)
        self._digest = fnv1a64(line.encode() + b"\n", self._digest)

    # -- node-facing operations --

    def _send(self, src: int, dst: int, payload: dict) -> None:
        if src < self.config.n and not self.live[src]:
            self._trace("sender_down", src, dst, summarize(payload))
            return
        if dst not in self.nodes:
            raise SimError(f"send to unknown node {dst}")
        self._trace("send", src, dst, summarize(payload))
        dropped = self.rng.chance(self.config.drop_prob)
        delay = self.rng.randrange(self.config.min_delay, self.config.max_delay)
        if dropped:
            self._trace("drop", src, dst, summarize(payload))
            return
        deliver = self.clock + delay
        self._send_seq[src] += 1
        env = Envelope(src, dst, payload, self.clock, deliver)
        self._push(deliver, _LANE_DELIVER, (src, dst, self._send_seq[src]), ("deliver", env))

    def _set_timer(self, node: int, delay: int, payload: dict) -> None:
        if delay < 1:
            raise SimError("timer delay must be >= 1")
        self._seq += 1
        epoch = self.epoch[node] if node < self.config.n else 0
        self._push(self.clock + delay, _LANE_TIMER, (node, self._seq, 0), ("timer", node, epoch, payload))

    def _commit(self, node: int, reg_idx: int, write: WriteOp) -> None:
        self.registers[reg_idx] = append_committed(self.registers[reg_idx], write)
        self.history.append(Event(self.clock, reg_idx, EventKind.COMMIT, write=write))
        self._trace("commit", node, reg_idx, f"w={write.op_id} v={write.value}")

    def _respond(self, node: int, op: ClientOp, result: str) -> None:
        if op.op_id in self._responded:
            raise ModelError(f"duplicate response for op {op.op_id}")
        self._responded.add(op.op_id)
        self._pending_ops.pop(op.op_id, None)
        self.history.append(Event(self.clock, node, EventKind.RESPOND, op=op, result=result))
        self._trace("respond", node, None, f"op={op.op_id} {result}")

    def _emit_pass(self, node: int, **fields) -> None:
        trace = PassTrace(pass_index=len(self.passes), **fields)
        self.passes.append(trace)
        sizes = ",".join(str(q.size) for q in trace.quorums)
        self._trace(
            "pass", node, None,
            f"case={trace.case} path={'+'.join(s.value for s in trace.path)} "
            f"rtts={trace.total_rtts} q={sizes} w={len(trace.converged)}",
        )

    # -- fault machinery --

    def _same_side(self, a: int, b: int) -> bool:
        if self.partition is None:
            return True
        if a >= self.config.n or b >= self.config.n:
            return True  # the shared-memory endpoint ignores partitions
        ga = next(i for i, g in enumerate(self.partition) if a in g)
        gb = next(i for i, g in enumerate(self.partition) if b in g)
        return ga == gb

    def _apply_fault(self, ev: FaultEvent) -> None:
        if ev.action == "crash":
            self.live[ev.writer] = False
            self.epoch[ev.writer] += 1
            self._trace("crash", ev.writer, None, "")
        elif ev.action == "recover":
            self.live[ev.writer] = True
            self.epoch[ev.writer] += 1
            ctx = NodeCtx(self, ev.writer, self.nodes[ev.writer].ctx.register_index)
            self.nodes[ev.writer] = self._node_factory(ctx)
            self._trace("recover", ev.writer, None, "")
            self.nodes[ev.writer].on_recover()
            pending = self._mailbox[ev.writer]
            self._mailbox[ev.writer] = []
            for op in pending:
                self.nodes[ev.writer].on_client_request(op)
        elif ev.action == "partition":
            self.partition = ev.groups
            groups = ";".join(",".join(map(str, sorted(g))) for g in ev.groups)
            self._trace("partition", None, None, groups)
        elif ev.action == "heal":
            self.partition = None
            self._trace("heal", None, None, "")

    # -- stepping --

    def step(self) -> list[Envelope]:
        """Advance to the next event tick; return envelopes delivered there."""
        if not self._heap:
            raise NothingPending
        tick = self._heap[0][0]
        if tick > self.config.max_ticks:
            self.timed_out = True
            raise SimTimeout(f"next event at tick {tick} beyond max_ticks")
        self.clock = tick
        delivered: list[Envelope] = []
        while self._heap and self._heap[0][0] == tick:
            _, lane, _, _, payload = heapq.heappop(self._heap)
            if lane == _LANE_FAULT:
                self._apply_fault(payload[1])
            elif lane == _LANE_INJECT:
                self._inject(payload[1])
            elif lane == _LANE_DELIVER:
                env = payload[1]
                if self._deliver(env):
                    delivered.append(env)
            else:
                self._fire_timer(payload)
        return delivered

    def _inject(self, item: WorkItem) -> None:
        seq = self._client_seq[item.writer_id]
        self._client_seq[item.writer_id] += 1
        op = ClientOp(item.writer_id, seq, item.kind, item.key, item.value, item.expected)
        self.history.append(Event(self.clock, item.writer_id, EventKind.INVOKE, op=op))
        self._pending_ops[op.op_id] = op
        self._trace("inject", item.writer_id, None, f"op={op.op_id} {item.kind} {item.key}")
        if self.live[item.writer_id]:
            self.nodes[item.writer_id].on_client_request(op)
        else:
            self._mailbox[item.writer_id].append(op)

    def _deliver(self, env: Envelope) -> bool:
        if env.dst < self.config.n and not self.live[env.dst]:
            self._trace("down_drop", env.src, env.dst, summarize(env.payload))
            return False
        if not self._same_side(env.src, env.dst):
            self._trace("partition_drop", env.src, env.dst, summarize(env.payload))
            return False
        self._trace("deliver", env.src, env.dst, summarize(env.payload))
        self.nodes[env.dst].on_message(env.src, env.payload)
        return True

    def _fire_timer(self, payload: tuple) -> None:
        _, node, epoch, data = payload
        current = self.epoch[node] if node < self.config.n else 0
        if epoch != current:
            return  # timer belonged to a crashed incarnation
        if node < self.config.n and not self.live[node]:
            return
        self._trace("timer", node, None, summarize(data))
        self.nodes[node].on_timer(data)

    def run(self) -> RunResult:
        while True:
            try:
                self.step()
            except NothingPending:
                break
            except SimTimeout:
                break
        for node_id in sorted(self.nodes):
            self.nodes[node_id].on_finish()
        delivered = None
        sets = [self.nodes[i].delivered_ops() for i in range(self.config.n)]
        if all(s is not None for s in sets):
            delivered = sets
        unfinished = [op for oid, op in sorted(self._pending_ops.items()) if oid not in self._responded]
        return RunResult(
            history=self.history,
            passes=self.passes,
            digest=f"{self._digest:016x}",
            trace_lines=self.trace_lines,
            registers=list(self.registers),
            timed_out=self.timed_out,
            unfinished=unfinished,
            delivered=delivered,
        )


def run_until_quiescent(
    config: SimConfig,
    node_factory: Callable[[NodeCtx], MechanismNode],
    workload: list[WorkItem],
    **kwargs,
) -> RunResult:
    """Build a world and run it until the queue drains or max_ticks passes."""
    return World(config, node_factory, workload, **kwargs).run()
