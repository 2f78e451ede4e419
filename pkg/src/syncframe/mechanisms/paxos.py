"""Chained single-decree consensus with proposer/acceptor/learner roles.

Each committed slot is one pass of synchronization: one round of permission
gathering (pre) followed by one round of value acceptance (exe) when
uncontended. Preempted proposers back off and retry with a higher ballot.

The sub-majority variant lowers every threshold to floor(n/2); it exists to
demonstrate that two disjoint sub-majority groups can commit conflicting
values under a partition. Never use it for anything but that demonstration.
"""

from __future__ import annotations

from typing import Optional

from ..model import ArbiterKind, ClientOp, Quorum, Stage, WriteOp
from ..sim import MechanismNode, NodeCtx
from .base import majority, write_to_wire, wire_to_write
from .render import render_series

_RETRY_BASE = 12


class _Task:
    """Driver for one client write: owns the current slot attempt."""

    def __init__(self, op: ClientOp, wseq: int):
        self.op = op
        self.wseq = wseq
        self.slot: Optional[int] = None
        self.ballot = -1
        self.phase = "idle"  # idle | prepare | accept | learn
        self.promises: dict[int, tuple[int, Optional[dict]]] = {}
        self.accept_acks: set[int] = set()
        self.learn_acks: set[int] = set()
        self.exe_targets: list[int] = []
        self.proposing: Optional[dict] = None  # wire of the write being pushed
        self.pre_rounds = 0
        self.exe_rounds = 0
        self.attempt = 0


class PaxosNode(MechanismNode):
    promise_threshold_of = staticmethod(majority)
    accept_threshold_of = staticmethod(majority)
    learn_threshold_of = staticmethod(majority)

    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        d = ctx.durable
        d.setdefault("slots", {})      # slot -> [promised, acc_ballot, acc_write]
        d.setdefault("committed", {})  # slot -> write wire
        d.setdefault("applied", 0)     # contiguous slots appended to the register
        d.setdefault("bal", 0)
        d.setdefault("wseq", 0)
        d.setdefault("pending", {})    # op_id -> (op fields, wseq)
        n = ctx.n
        self.promise_threshold = ctx.params.get("promise_threshold", self.promise_threshold_of(n))
        self.accept_threshold = ctx.params.get("accept_threshold", self.accept_threshold_of(n))
        self.learn_threshold = ctx.params.get("learn_threshold", self.learn_threshold_of(n))
        self.retry_base = ctx.params.get("retry_base", _RETRY_BASE)
        self.tasks: dict[tuple[int, int], _Task] = {}
        self.reads: dict[tuple[int, int], dict] = {}

    # -- client entry points --

    def on_client_request(self, op: ClientOp) -> None:
        d = self.ctx.durable
        if op.kind == "read":
            d["pending"][op.op_id] = {"key": op.key, "value": op.value, "kind": "read"}
            self._start_read(op)
            return
        wseq = d["wseq"]
        d["wseq"] = wseq + 1
        d["pending"][op.op_id] = {"key": op.key, "value": op.value, "kind": "write", "wseq": wseq}
        task = _Task(op, wseq)
        self.tasks[op.op_id] = task
        self._start_attempt(task)

    def on_recover(self) -> None:
        d = self.ctx.durable
        self.ctx.broadcast(self._others(), {"t": "pull"})
        for op_id_key, rec in sorted(d["pending"].items()):
            op = ClientOp(op_id_key[0], op_id_key[1], rec.get("kind", "write"), rec["key"], rec["value"])
            if op.kind == "read":
                self._start_read(op)
                continue
            task = _Task(op, rec["wseq"])
            self.tasks[op.op_id] = task
            slot = self._find_committed_own(task)
            if slot is not None:
                self._enter_learn(task, slot)
            else:
                self._start_attempt(task)

    # -- proposer --

    def _others(self) -> list[int]:
        return [i for i in self.ctx.writers() if i != self.ctx.node_id]

    def _own_write_wire(self, task: _Task) -> dict:
        w = WriteOp(self.ctx.node_id, task.wseq, task.op.value)
        return write_to_wire(w)

    def _next_vacant_slot(self) -> int:
        # Promised-but-undecided slots are NOT skipped: a crashed proposer
        # may have left a hole, and re-proposing there adopts any accepted
        # value, which is what fills the hole.
        d = self.ctx.durable
        used = set(d["committed"])
        used |= {t.slot for t in self.tasks.values() if t.slot is not None}
        slot = 0
        while slot in used:
            slot += 1
        return slot

    def _next_ballot(self, above: int = -1) -> int:
        d = self.ctx.durable
        n = self.ctx.n
        counter = max(d["bal"] + 1, above // n + 1)
        d["bal"] = counter
        return counter * n + self.ctx.node_id

    def _find_committed_own(self, task: _Task) -> Optional[int]:
        for slot, wire in self.ctx.durable["committed"].items():
            if wire["w"] == self.ctx.node_id and wire["s"] == task.wseq:
                return slot
        return None

    def _start_attempt(self, task: _Task, above: int = -1) -> None:
        if task.op.op_id not in self.ctx.durable["pending"]:
            return  # already responded
        committed_slot = self._find_committed_own(task)
        if committed_slot is not None:
            self._enter_learn(task, committed_slot)
            return
        if task.slot is None or task.slot in self.ctx.durable["committed"]:
            task.slot = self._next_vacant_slot()
            task.pre_rounds = 0
            task.exe_rounds = 0
        task.ballot = self._next_ballot(above)
        task.phase = "prepare"
        task.promises = {}
        task.accept_acks = set()
        task.pre_rounds += 1
        task.attempt += 1
        self.ctx.broadcast(self.ctx.writers(), {"t": "prepare", "slot": task.slot, "ballot": task.ballot})
        self._arm_timeout(task)

    def _arm_timeout(self, task: _Task) -> None:
        base = self.retry_base * min(max(task.attempt, 1), 6)
        delay = self.ctx.rand_range(base, 2 * base)
        self.ctx.set_timer(delay, {"t": "task_to", "op": list(task.op.op_id), "attempt": task.attempt})

    def _enter_learn(self, task: _Task, slot: int) -> None:
        task.phase = "learn"
        task.slot = slot
        task.learn_acks = set()
        wire = self.ctx.durable["committed"][slot]
        if slot < self.ctx.durable["applied"]:
            task.learn_acks.add(self.ctx.node_id)
        self.ctx.broadcast(self._others(), {"t": "learn", "slot": slot, "write": wire})
        self._arm_timeout(task)
        self._maybe_respond(task)

    def _maybe_respond(self, task: _Task) -> None:
        if task.phase == "learn" and len(task.learn_acks) >= self.learn_threshold:
            if task.op.op_id in self.ctx.durable["pending"]:
                del self.ctx.durable["pending"][task.op.op_id]
                self.ctx.respond(task.op, "committed")
            del self.tasks[task.op.op_id]

    # -- message handling --

    def on_message(self, src: int, msg: dict) -> None:
        t = msg["t"]
        if t == "prepare":
            self._on_prepare(src, msg)
        elif t == "promise":
            self._on_promise(src, msg)
        elif t == "accept":
            self._on_accept(src, msg)
        elif t == "accepted":
            self._on_accepted(src, msg)
        elif t == "nack":
            self._on_nack(src, msg)
        elif t == "learn":
            self._on_learn(src, msg)
        elif t == "learn_ack":
            self._on_learn_ack(src, msg)
        elif t == "pull":
            self.ctx.send(src, {"t": "pull_reply", "committed": dict(self.ctx.durable["committed"])})
        elif t == "pull_reply":
            for slot, wire in sorted(msg["committed"].items()):
                self._learn_slot(int(slot), wire)
        elif t == "read_q":
            series = [write_to_wire(w) for w in self.ctx.register().series]
            self.ctx.send(src, {"t": "read_r", "rid": msg["rid"], "series": series})
        elif t == "read_r":
            self._on_read_reply(src, msg)

    def _slot_state(self, slot: int) -> list:
        return self.ctx.durable["slots"].setdefault(slot, [-1, -1, None])

    def _on_prepare(self, src: int, msg: dict) -> None:
        st = self._slot_state(msg["slot"])
        if msg["ballot"] >= st[0]:
            st[0] = msg["ballot"]
            self.ctx.send(src, {
                "t": "promise", "slot": msg["slot"], "ballot": msg["ballot"],
                "acc_ballot": st[1], "acc_write": st[2],
            })
        else:
            self.ctx.send(src, {"t": "nack", "slot": msg["slot"], "ballot": msg["ballot"], "seen": st[0]})

    def _on_promise(self, src: int, msg: dict) -> None:
        task = self._match_task(msg)
        if task is None or task.phase != "prepare":
            return
        task.promises[src] = (msg["acc_ballot"], msg["acc_write"])
        if len(task.promises) < self.promise_threshold:
            return
        acc = [(b, w) for b, w in task.promises.values() if w is not None]
        task.proposing = max(acc, key=lambda bw: bw[0])[1] if acc else self._own_write_wire(task)
        task.phase = "accept"
        task.exe_rounds += 1
        task.exe_targets = sorted(task.promises)[: self.accept_threshold]
        for dst in task.exe_targets:
            self.ctx.send(dst, {"t": "accept", "slot": task.slot, "ballot": task.ballot, "write": task.proposing})

    def _on_accept(self, src: int, msg: dict) -> None:
        st = self._slot_state(msg["slot"])
        if msg["ballot"] >= st[0]:
            st[0] = msg["ballot"]
            st[1] = msg["ballot"]
            st[2] = msg["write"]
            self.ctx.send(src, {"t": "accepted", "slot": msg["slot"], "ballot": msg["ballot"]})
        else:
            self.ctx.send(src, {"t": "nack", "slot": msg["slot"], "ballot": msg["ballot"], "seen": st[0]})

    def _on_accepted(self, src: int, msg: dict) -> None:
        task = self._match_task(msg)
        if task is None or task.phase != "accept":
            return
        task.accept_acks.add(src)
        if len(task.accept_acks) < self.accept_threshold:
            return
        chosen = task.proposing
        self.ctx.emit_pass(
            path=(Stage.PRE, Stage.EXE),
            rtts_per_stage={Stage.PRE: float(task.pre_rounds), Stage.EXE: float(task.exe_rounds)},
            quorums=(
                Quorum(frozenset(self.ctx.writers()), Stage.PRE),
                Quorum(frozenset(task.exe_targets), Stage.EXE),
            ),
            converged=frozenset({wire_to_write(chosen)}),
            arbiter_kind=ArbiterKind.STATIC,
            case="-",
        )
        self._learn_slot(task.slot, chosen)
        self.ctx.broadcast(self._others(), {"t": "learn", "slot": task.slot, "write": chosen})
        if chosen["w"] == self.ctx.node_id and chosen["s"] == task.wseq:
            self._enter_learn(task, task.slot)
        else:
            # Someone else's value won this slot; push ours at the next one.
            task.slot = None
            self._start_attempt(task)

    def _on_nack(self, src: int, msg: dict) -> None:
        task = self._match_task(msg)
        if task is None or task.phase not in ("prepare", "accept"):
            return
        task.phase = "backoff"
        base = self.retry_base * min(task.attempt, 6)
        delay = self.ctx.rand_range(base, 2 * base)
        self.ctx.set_timer(delay, {"t": "task_retry", "op": list(task.op.op_id), "seen": msg["seen"]})

    def _match_task(self, msg: dict) -> Optional[_Task]:
        for task in self.tasks.values():
            if task.slot == msg["slot"] and task.ballot == msg["ballot"]:
                return task
        return None

    # -- learner --

    def _learn_slot(self, slot: int, wire: dict) -> None:
        d = self.ctx.durable
        existing = d["committed"].get(slot)
        if existing is not None:
            assert existing == wire, f"slot {slot} decided twice with different writes"
        d["committed"][slot] = wire
        while d["applied"] in d["committed"]:
            applying = d["applied"]
            w = wire_to_write(d["committed"][applying])
            self.ctx.commit(w)
            d["applied"] = applying + 1
            if w.writer_id == self.ctx.node_id:
                for task in list(self.tasks.values()):
                    if task.wseq == w.op_seq and task.phase == "learn":
                        task.learn_acks.add(self.ctx.node_id)
                        self._maybe_respond(task)
            else:
                self.ctx.send(w.writer_id, {"t": "learn_ack", "slot": applying})

    def _on_learn_ack(self, src: int, msg: dict) -> None:
        for task in list(self.tasks.values()):
            if task.phase == "learn" and task.slot == msg["slot"]:
                task.learn_acks.add(src)
                self._maybe_respond(task)

    def _on_learn(self, src: int, msg: dict) -> None:
        already_applied = msg["slot"] < self.ctx.durable["applied"]
        self._learn_slot(msg["slot"], msg["write"])
        if already_applied:
            origin = msg["write"]["w"]
            if origin != self.ctx.node_id:
                self.ctx.send(origin, {"t": "learn_ack", "slot": msg["slot"]})

    # -- timers --

    def on_timer(self, payload: dict) -> None:
        t = payload["t"]
        if t in ("task_to", "task_retry"):
            op_id = tuple(payload["op"])
            task = self.tasks.get(op_id)
            if task is None:
                return
            if t == "task_to" and payload["attempt"] != task.attempt:
                return
            if task.phase == "learn":
                self._enter_learn(task, task.slot)  # re-broadcast, recount acks
                return
            self._start_attempt(task, above=payload.get("seen", -1))
        elif t == "read_to":
            rid = tuple(payload["rid"])
            state = self.reads.get(rid)
            if state is not None:
                self._broadcast_read(state)

    # -- reads: quorum query, longest applied prefix wins --

    def _start_read(self, op: ClientOp) -> None:
        state = {"op": op, "replies": {}}
        self.reads[op.op_id] = state
        self._broadcast_read(state)

    def _broadcast_read(self, state: dict) -> None:
        op = state["op"]
        state["replies"] = {}
        self.ctx.broadcast(self.ctx.writers(), {"t": "read_q", "rid": list(op.op_id)})
        self.ctx.set_timer(self.retry_base * 4, {"t": "read_to", "rid": list(op.op_id)})

    def _on_read_reply(self, src: int, msg: dict) -> None:
        rid = tuple(msg["rid"])
        state = self.reads.get(rid)
        if state is None:
            return
        state["replies"][src] = msg["series"]
        if len(state["replies"]) >= self.learn_threshold:
            longest = max(state["replies"].values(), key=len)
            op = state["op"]
            del self.reads[rid]
            self.ctx.durable["pending"].pop(op.op_id, None)
            self.ctx.respond(op, "read:" + render_series(self.ctx.register().projection, longest))


class BrokenSubMajorityPaxosNode(PaxosNode):
    """Paxos with all thresholds lowered to floor(n/2). Unsafe by design."""

    promise_threshold_of = staticmethod(lambda n: n // 2)
    accept_threshold_of = staticmethod(lambda n: n // 2)
    learn_threshold_of = staticmethod(lambda n: n // 2)
