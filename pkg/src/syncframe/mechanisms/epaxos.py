"""Leaderless consensus: every writer proposes directly into its own
instance space.

A proposal reaches a fast quorum in one round; identical dependency reports
commit it immediately, divergent reports cost one more majority round to fix
the final dependency set. Committed instances execute in dependency order
with strongly-connected groups broken deterministically.

The priority variant resolves conflicting orders locally from a pre-assigned
writer tree instead of running the extra round, so divergent reports still
commit after the first round trip.
"""

from __future__ import annotations

from typing import Optional

from ..model import ArbiterKind, ClientOp, Quorum, Stage, WriteOp
from ..sim import MechanismNode, NodeCtx
from .base import PriorityTree, fast_quorum, majority, write_to_wire, wire_to_write
from .render import render_series

_RETRY_BASE = 20


def _iid(pair) -> tuple[int, int]:
    return (pair[0], pair[1])


class EPaxosNode(MechanismNode):
    use_priority = False

    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        d = ctx.durable
        d.setdefault("instances", {})  # (leader, slot) -> {"st", "write", "key", "deps"}
        d.setdefault("slot", 0)
        d.setdefault("pending", {})    # op_id -> {"key","value","kind","slot"}
        n = ctx.n
        self.fq_size = fast_quorum(n, ctx.params.get("fast_quorum_rule", "floor"))
        self.majority = majority(n)
        self.retry_base = ctx.params.get("retry_base", _RETRY_BASE)
        tree = ctx.params.get("priority_tree")
        self.tree: Optional[PriorityTree] = None
        if self.use_priority:
            self.tree = PriorityTree(tree) if tree else PriorityTree.chain(n)
        self.tasks: dict[tuple[int, int], dict] = {}   # iid -> round state
        self.key_index: dict[str, set[tuple[int, int]]] = {}
        for iid, inst in d["instances"].items():
            self.key_index.setdefault(inst["key"], set()).add(iid)
        self.executed: set[tuple[int, int]] = {
            iid for iid, inst in d["instances"].items() if inst["st"] == "exec"
        }
        self.reads: dict[tuple[int, int], dict] = {}

    # -- client entry points --

    def on_client_request(self, op: ClientOp) -> None:
        d = self.ctx.durable
        if op.kind == "read":
            d["pending"][op.op_id] = {"key": op.key, "value": op.value, "kind": op.kind, "slot": None}
            self._start_read(op)
            return
        slot = d["slot"]
        d["slot"] = slot + 1
        d["pending"][op.op_id] = {"key": op.key, "value": op.value, "kind": op.kind, "slot": slot}
        self._propose(op, slot)

    def on_recover(self) -> None:
        self.ctx.broadcast(self._others(), {"t": "pull"})
        d = self.ctx.durable
        for op_id, rec in sorted(d["pending"].items()):
            op = ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"])
            if rec["kind"] == "read":
                self._start_read(op)
                continue
            iid = (self.ctx.node_id, rec["slot"])
            inst = d["instances"].get(iid)
            if inst is not None and inst["st"] in ("com", "exec"):
                self._try_execute()
                self._maybe_respond(iid)
            else:
                self._propose(op, rec["slot"])

    def _others(self) -> list[int]:
        return [i for i in self.ctx.writers() if i != self.ctx.node_id]

    def _local_deps(self, key: str, exclude: tuple[int, int]) -> list:
        return sorted(i for i in self.key_index.get(key, set()) if i != exclude)

    def _fq_members(self, attempt: int) -> list[int]:
        me, n = self.ctx.node_id, self.ctx.n
        ring = [(me + 1 + j) % n for j in range(n - 1)]
        k = attempt % (n - 1) if n > 1 else 0
        rotated = ring[k:] + ring[:k]
        return [me] + rotated[: self.fq_size - 1]

    def _propose(self, op: ClientOp, slot: int, attempt: int = 0) -> None:
        d = self.ctx.durable
        iid = (self.ctx.node_id, slot)
        deps = self._local_deps(op.key, iid)
        inst = d["instances"].get(iid)
        if inst is None or inst["st"] == "pre":
            d["instances"][iid] = {
                "st": "pre", "write": write_to_wire(WriteOp(self.ctx.node_id, slot, op.value)),
                "key": op.key, "deps": deps,
            }
            self.key_index.setdefault(op.key, set()).add(iid)
        members = self._fq_members(attempt)
        self.tasks[iid] = {
            "op": op, "attempt": attempt, "phase": "pre",
            "replies": {self.ctx.node_id: deps}, "members": members, "acc_acks": set(),
        }
        wire = d["instances"][iid]["write"]
        for dst in members[1:]:
            self.ctx.send(dst, {
                "t": "pre_accept", "inst": list(iid), "write": wire,
                "key": op.key, "deps": deps, "att": attempt,
            })
        delay = self.ctx.rand_range(self.retry_base, 2 * self.retry_base) * min(attempt + 1, 5)
        self.ctx.set_timer(delay, {"t": "task_to", "inst": list(iid), "attempt": attempt})

    # -- message handling --

    def on_message(self, src: int, msg: dict) -> None:
        t = msg["t"]
        if t == "pre_accept":
            self._on_pre_accept(src, msg)
        elif t == "pre_accept_ok":
            self._on_pre_accept_ok(src, msg)
        elif t == "acc":
            self._on_acc(src, msg)
        elif t == "acc_ok":
            self._on_acc_ok(src, msg)
        elif t == "commit":
            self._record_commit(_iid(msg["inst"]), msg["write"], msg["key"], msg["deps"])
        elif t == "committed_hint":
            self._record_commit(_iid(msg["inst"]), msg["write"], msg["key"], msg["deps"])
            self._maybe_respond(_iid(msg["inst"]))
        elif t == "pull":
            committed = {
                iid: inst for iid, inst in self.ctx.durable["instances"].items()
                if inst["st"] in ("com", "exec")
            }
            self.ctx.send(src, {"t": "pull_reply", "committed": [
                {"inst": list(iid), "write": inst["write"], "key": inst["key"], "deps": inst["deps"]}
                for iid, inst in sorted(committed.items())
            ]})
        elif t == "pull_reply":
            for rec in msg["committed"]:
                self._record_commit(_iid(rec["inst"]), rec["write"], rec["key"], rec["deps"])
                self._maybe_respond(_iid(rec["inst"]))
        elif t == "read_q":
            series = [write_to_wire(w) for w in self.ctx.register().series]
            self.ctx.send(src, {"t": "read_r", "rid": msg["rid"], "series": series})
        elif t == "read_r":
            self._on_read_reply(src, msg)

    def _on_pre_accept(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        iid = _iid(msg["inst"])
        inst = d["instances"].get(iid)
        if inst is not None and inst["st"] in ("com", "exec"):
            self.ctx.send(src, {
                "t": "committed_hint", "inst": list(iid),
                "write": inst["write"], "key": inst["key"], "deps": inst["deps"],
            })
            return
        merged = sorted(set(_iid(p) for p in msg["deps"]) | set(self._local_deps(msg["key"], iid)))
        d["instances"][iid] = {"st": "pre", "write": msg["write"], "key": msg["key"], "deps": merged}
        self.key_index.setdefault(msg["key"], set()).add(iid)
        self.ctx.send(src, {
            "t": "pre_accept_ok", "inst": list(iid),
            "deps": [list(p) for p in merged], "att": msg["att"],
        })

    def _on_pre_accept_ok(self, src: int, msg: dict) -> None:
        iid = _iid(msg["inst"])
        task = self.tasks.get(iid)
        if task is None or task["phase"] != "pre" or src not in task["members"]:
            return
        if msg["att"] != task["attempt"]:
            return
        task["replies"][src] = sorted(_iid(p) for p in msg["deps"])
        if len(task["replies"]) < self.fq_size:
            return
        reports = [tuple(task["replies"][m]) for m in task["members"]]
        identical = all(r == reports[0] for r in reports)
        union = sorted(set().union(*[set(r) for r in reports]))
        inst = self.ctx.durable["instances"][iid]
        fastq = Quorum(frozenset(task["members"]), Stage.EXE)
        if identical:
            task["phase"] = "done"
            self._finish_commit(iid, inst, union, case="fast", rtts=1.0, quorums=(fastq,))
        elif self.use_priority:
            # Divergence resolved locally by the priority tree: no extra round.
            task["phase"] = "done"
            self._finish_commit(iid, inst, union, case="slow", rtts=1.0, quorums=(fastq,))
        else:
            task["phase"] = "acc"
            task["final_deps"] = union
            task["fastq"] = fastq
            inst["deps"] = union
            inst["st"] = "acc"
            targets = sorted(task["replies"])[: self.majority]
            task["acc_targets"] = targets
            task["acc_acks"] = {self.ctx.node_id}
            for dst in targets:
                if dst != self.ctx.node_id:
                    self.ctx.send(dst, {"t": "acc", "inst": list(iid), "deps": [list(p) for p in union]})

    def _on_acc(self, src: int, msg: dict) -> None:
        iid = _iid(msg["inst"])
        inst = self.ctx.durable["instances"].get(iid)
        if inst is None or inst["st"] in ("com", "exec"):
            if inst is not None:
                self.ctx.send(src, {
                    "t": "committed_hint", "inst": list(iid),
                    "write": inst["write"], "key": inst["key"], "deps": inst["deps"],
                })
            return
        inst["st"] = "acc"
        inst["deps"] = sorted(_iid(p) for p in msg["deps"])
        self.ctx.send(src, {"t": "acc_ok", "inst": list(iid)})

    def _on_acc_ok(self, src: int, msg: dict) -> None:
        iid = _iid(msg["inst"])
        task = self.tasks.get(iid)
        if task is None or task["phase"] != "acc":
            return
        task["acc_acks"].add(src)
        if len(task["acc_acks"]) < self.majority:
            return
        task["phase"] = "done"
        inst = self.ctx.durable["instances"][iid]
        majq = Quorum(frozenset(task["acc_targets"]) | {self.ctx.node_id}, Stage.EXE)
        self._finish_commit(iid, inst, task["final_deps"], case="slow", rtts=2.0,
                            quorums=(task["fastq"], majq))

    def _finish_commit(self, iid, inst, deps, case: str, rtts: float, quorums) -> None:
        self.ctx.emit_pass(
            path=(Stage.EXE,),
            rtts_per_stage={Stage.EXE: rtts},
            quorums=tuple(quorums),
            converged=frozenset({wire_to_write(inst["write"])}),
            arbiter_kind=ArbiterKind.DYNAMIC,
            case=case,
        )
        self._record_commit(iid, inst["write"], inst["key"], deps)
        self.ctx.broadcast(self._others(), {
            "t": "commit", "inst": list(iid), "write": inst["write"],
            "key": inst["key"], "deps": [list(p) for p in deps],
        })
        self._maybe_respond(iid)

    def _record_commit(self, iid, write_wire, key, deps) -> None:
        d = self.ctx.durable
        inst = d["instances"].get(iid)
        if inst is not None and inst["st"] in ("com", "exec"):
            return
        d["instances"][iid] = {
            "st": "com", "write": write_wire, "key": key,
            "deps": sorted(_iid(p) for p in deps),
        }
        self.key_index.setdefault(key, set()).add(iid)
        self._try_execute()

    def _maybe_respond(self, iid) -> None:
        d = self.ctx.durable
        if iid[0] != self.ctx.node_id:
            return
        inst = d["instances"].get(iid)
        if inst is None or inst["st"] != "exec":
            return
        for op_id, rec in list(d["pending"].items()):
            if rec.get("slot") == iid[1] and op_id[0] == self.ctx.node_id:
                del d["pending"][op_id]
                self.ctx.respond(ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]), "committed")

    # -- execution: dependency order with deterministic group breaking --

    def _exec_key(self, iid) -> tuple:
        if self.tree is not None:
            return (*self.tree.sort_key(iid[0]), iid[1])
        return (iid[0], iid[1])

    def _try_execute(self) -> None:
        d = self.ctx.durable
        progressed = True
        while progressed:
            progressed = False
            candidates = sorted(
                iid for iid, inst in d["instances"].items()
                if inst["st"] == "com" and iid not in self.executed
            )
            for iid in candidates:
                component = self._committed_closure(iid)
                if component is None:
                    continue
                self._execute_component(component)
                progressed = True
                break

    def _committed_closure(self, root) -> Optional[list]:
        """All instances reachable from root via deps; None if any is missing
        or not yet committed."""
        d = self.ctx.durable
        seen = {root}
        stack = [root]
        while stack:
            cur = stack.pop()
            inst = d["instances"].get(cur)
            if inst is None or inst["st"] not in ("com", "exec"):
                return None
            for dep in inst["deps"]:
                dep = _iid(dep)
                if dep not in seen:
                    seen.add(dep)
                    stack.append(dep)
        return sorted(seen)

    def _execute_component(self, nodes: list) -> None:
        d = self.ctx.durable
        edges = {iid: [_iid(p) for p in d["instances"][iid]["deps"] if _iid(p) in set(nodes)]
                 for iid in nodes}
        for scc in _sccs_reverse_topo(nodes, edges):
            for iid in sorted(scc, key=self._exec_key):
                if iid in self.executed:
                    continue
                self.executed.add(iid)
                inst = d["instances"][iid]
                inst["st"] = "exec"
                self.ctx.commit(wire_to_write(inst["write"]))
                self._maybe_respond(iid)

    # -- timers and reads --

    def on_timer(self, payload: dict) -> None:
        t = payload["t"]
        if t == "task_to":
            iid = _iid(payload["inst"])
            task = self.tasks.get(iid)
            if task is None or task["phase"] == "done" or payload["attempt"] != task["attempt"]:
                return
            rec = None
            for op_id, r in self.ctx.durable["pending"].items():
                if r.get("slot") == iid[1]:
                    rec = (op_id, r)
                    break
            if rec is None:
                return
            op = ClientOp(rec[0][0], rec[0][1], rec[1]["kind"], rec[1]["key"], rec[1]["value"])
            self._propose(op, iid[1], attempt=task["attempt"] + 1)
        elif t == "read_to":
            rid = tuple(payload["rid"])
            if rid in self.reads:
                self._broadcast_read(self.reads[rid])

    def _start_read(self, op: ClientOp) -> None:
        state = {"op": op, "replies": {}}
        self.reads[op.op_id] = state
        self._broadcast_read(state)

    def _broadcast_read(self, state: dict) -> None:
        state["replies"] = {}
        self.ctx.broadcast(self.ctx.writers(), {"t": "read_q", "rid": list(state["op"].op_id)})
        self.ctx.set_timer(self.retry_base * 4, {"t": "read_to", "rid": list(state["op"].op_id)})

    def _on_read_reply(self, src: int, msg: dict) -> None:
        rid = tuple(msg["rid"])
        state = self.reads.get(rid)
        if state is None:
            return
        state["replies"][src] = msg["series"]
        if len(state["replies"]) >= self.majority:
            longest = max(state["replies"].values(), key=len)
            op = state["op"]
            del self.reads[rid]
            self.ctx.durable["pending"].pop(op.op_id, None)
            self.ctx.respond(op, "read:" + render_series(self.ctx.register().projection, longest))


class EPaxosPriorityNode(EPaxosNode):
    use_priority = True


def _sccs_reverse_topo(nodes: list, edges: dict) -> list[list]:
    """Tarjan over the dependency graph; emits components dependencies-first.

    Iteration order is fully deterministic given sorted node lists.
    """
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    out: list[list] = []
    counter = [0]

    def strongconnect(v):
        work = [(v, iter(sorted(edges[v])))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(edges[w]))))
                    advanced = True
                    break
                if w in on_stack:
                    low[node] = min(low[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                out.append(sorted(comp))

    for v in sorted(nodes):
        if v not in index:
            strongconnect(v)
    return out
