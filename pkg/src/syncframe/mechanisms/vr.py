"""Round-robin leadership with view changes instead of elections.

The leader of view v is writer v mod n, so no vote round is needed: when a
leader is suspected dead, the next leader in the rotation gathers state from
a majority (one round trip) and announces the new view with a one-way
broadcast (half a round trip, recorded in the trace but not awaited).
"""

from __future__ import annotations

from typing import Optional

from ..model import ArbiterKind, ClientOp, Metadata, Quorum, Stage, WriteOp
from ..sim import MechanismNode, NodeCtx
from .base import majority, write_to_wire, wire_to_write
from .render import render_register

_RETRY_BASE = 16


class VrNode(MechanismNode):
    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        d = ctx.durable
        d.setdefault("view", 0)
        d.setdefault("last_normal", 0)
        d.setdefault("log", [])       # entries: {"view", "write": wire, "origin": [w, cseq]|None}
        d.setdefault("commit_no", 0)  # count of committed entries
        d.setdefault("pending", {})
        d.setdefault("wseq", 0)
        self.majority = majority(ctx.n)
        self.retry_base = ctx.params.get("retry_base", _RETRY_BASE)

        self.acks: dict[int, set[int]] = {}       # opnum -> prepare_ok senders
        self.dvc_replies: dict[int, dict] = {}    # view change in flight: src -> state
        self.dvc_view: Optional[int] = None
        self.op_attempts: dict[tuple[int, int], tuple[int, int]] = {}  # op -> (view, retries)
        self.reads: dict[tuple[int, int], dict] = {}
        self.read_seq = 0
        self._applied_ids = {w.op_id for w in ctx.register().series}

    def _leader_of(self, view: int) -> int:
        return view % self.ctx.n

    def _is_leader(self) -> bool:
        return self._leader_of(self.ctx.durable["view"]) == self.ctx.node_id

    def _others(self) -> list[int]:
        return [i for i in self.ctx.writers() if i != self.ctx.node_id]

    # -- client entry points --

    def on_client_request(self, op: ClientOp) -> None:
        self.ctx.durable["pending"][op.op_id] = {"key": op.key, "value": op.value, "kind": op.kind}
        self._submit(op)

    def on_recover(self) -> None:
        self.ctx.broadcast(self._others(), {"t": "pull"})
        for op_id, rec in sorted(self.ctx.durable["pending"].items()):
            self._arm_op_retry(ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]))

    def _submit(self, op: ClientOp) -> None:
        if self._is_leader():
            self._leader_handle(self.ctx.node_id, op)
        else:
            self.ctx.send(self._leader_of(self.ctx.durable["view"]), {
                "t": "forward", "op": list(op.op_id),
                "key": op.key, "value": op.value, "kind": op.kind,
            })
        self._arm_op_retry(op)

    def _arm_op_retry(self, op: ClientOp) -> None:
        delay = self.ctx.rand_range(3 * self.retry_base, 5 * self.retry_base)
        self.ctx.set_timer(delay, {"t": "op_retry", "op": list(op.op_id)})

    # -- normal operation --

    def _leader_handle(self, src: int, op: ClientOp) -> None:
        if op.kind == "read":
            self._leader_read(src, op)
            return
        d = self.ctx.durable
        origin = list(op.op_id)
        for idx, entry in enumerate(d["log"]):
            if entry["origin"] == origin:
                if idx >= d["commit_no"]:
                    # Known but uncommitted: retransmit its prepare round.
                    self.acks.setdefault(idx + 1, {self.ctx.node_id})
                    self.ctx.broadcast(self._others(), {
                        "t": "prepare", "view": d["view"], "opnum": idx + 1,
                        "entry": entry, "commit": d["commit_no"],
                    })
                elif origin[0] == self.ctx.node_id:
                    self._complete_op(tuple(origin))
                else:
                    # Decided while the origin was unreachable; re-notify.
                    self.ctx.send(origin[0], {"t": "op_done", "op": origin})
                return
        w = WriteOp(self.ctx.node_id, d["wseq"], op.value)
        d["wseq"] += 1
        d["log"].append({"view": d["view"], "write": write_to_wire(w), "origin": origin})
        opnum = len(d["log"])
        self.acks[opnum] = {self.ctx.node_id}
        self.ctx.broadcast(self._others(), {
            "t": "prepare", "view": d["view"], "opnum": opnum,
            "entry": d["log"][-1], "commit": d["commit_no"],
        })

    def _apply_committed(self, emit: bool = False) -> None:
        d = self.ctx.durable
        for idx in range(d["commit_no"]):
            entry = d["log"][idx]
            w = wire_to_write(entry["write"])
            if w.op_id in self._applied_ids:
                continue
            self._applied_ids.add(w.op_id)
            if not w.is_null():
                self.ctx.commit(w)
            if emit:
                self.ctx.emit_pass(
                    path=(Stage.EXE,),
                    rtts_per_stage={Stage.EXE: 1.0},
                    quorums=(Quorum(frozenset(self.ctx.writers()), Stage.EXE),),
                    converged=frozenset({w}),
                    arbiter_kind=ArbiterKind.STATIC,
                    case="normal",
                )
            origin = entry["origin"]
            if origin is not None and emit:
                if origin[0] == self.ctx.node_id:
                    self._complete_op(tuple(origin))
                else:
                    self.ctx.send(origin[0], {"t": "op_done", "op": origin})

    def _complete_op(self, op_id: tuple[int, int]) -> None:
        rec = self.ctx.durable["pending"].pop(op_id, None)
        if rec is not None:
            self.ctx.respond(ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]), "committed")

    # -- message handling --

    def on_message(self, src: int, msg: dict) -> None:
        t = msg["t"]
        d = self.ctx.durable
        if t == "forward":
            if self._is_leader():
                self._leader_handle(src, ClientOp(msg["op"][0], msg["op"][1], msg["kind"], msg["key"], msg["value"]))
        elif t == "prepare":
            self._on_prepare(src, msg)
        elif t == "prepare_ok":
            self._on_prepare_ok(src, msg)
        elif t == "commit_note":
            if msg["view"] >= d["view"]:
                d["view"] = msg["view"]
                d["last_normal"] = msg["view"]
                d["commit_no"] = max(d["commit_no"], min(msg["commit"], len(d["log"])))
                self._apply_committed()
                if msg["commit"] > len(d["log"]):
                    self.ctx.send(src, {"t": "pull"})
        elif t == "nudge":
            self._maybe_drive_view_change(msg["view"])
        elif t == "dvc_req":
            self._on_dvc_req(src, msg)
        elif t == "dvc":
            self._on_dvc(src, msg)
        elif t == "start_view":
            self._on_start_view(src, msg)
        elif t == "op_done":
            self._complete_op(tuple(msg["op"]))
        elif t == "view_ping":
            if msg["view"] == d["view"]:
                self.ctx.send(src, {"t": "view_pong", "view": msg["view"], "rid": msg["rid"]})
        elif t == "view_pong":
            self._on_view_pong(src, msg)
        elif t == "read_result":
            op_id = tuple(msg["op"])
            rec = d["pending"].get(op_id)
            if rec is not None:
                del d["pending"][op_id]
                self.ctx.respond(ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]), msg["result"])
        elif t == "pull":
            self.ctx.send(src, {
                "t": "pull_reply", "view": d["view"], "last_normal": d["last_normal"],
                "log": list(d["log"]), "commit": d["commit_no"],
            })
        elif t == "pull_reply":
            self._adopt_state(msg)

    def _on_prepare(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        if msg["view"] < d["view"]:
            return
        if msg["view"] > d["view"]:
            d["view"] = msg["view"]
            d["last_normal"] = msg["view"]
        opnum = msg["opnum"]
        log = d["log"]
        if opnum <= len(log):
            if log[opnum - 1]["view"] != msg["entry"]["view"]:
                del log[opnum - 1:]
                log.append(msg["entry"])
        elif opnum == len(log) + 1:
            log.append(msg["entry"])
        else:
            self.ctx.send(src, {"t": "pull"})
            return
        d["commit_no"] = max(d["commit_no"], min(msg["commit"], len(log)))
        self._apply_committed()
        self.ctx.send(src, {"t": "prepare_ok", "view": msg["view"], "opnum": opnum})

    def _on_prepare_ok(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        if msg["view"] != d["view"] or not self._is_leader():
            return
        acks = self.acks.get(msg["opnum"])
        if acks is None:
            return
        acks.add(src)
        if len(acks) >= self.majority and msg["opnum"] == d["commit_no"] + 1:
            while d["commit_no"] + 1 in self.acks and len(self.acks[d["commit_no"] + 1]) >= self.majority:
                d["commit_no"] += 1
                del self.acks[d["commit_no"]]
            self._apply_committed(emit=True)
            self.ctx.broadcast(self._others(), {"t": "commit_note", "view": d["view"], "commit": d["commit_no"]})

    # -- view change --

    def _maybe_drive_view_change(self, target_view: int) -> None:
        d = self.ctx.durable
        if target_view <= d["view"] or self._leader_of(target_view) != self.ctx.node_id:
            return
        if self.dvc_view is not None and self.dvc_view >= target_view:
            return
        self.dvc_view = target_view
        self.dvc_replies = {self.ctx.node_id: {
            "last_normal": d["last_normal"], "log": list(d["log"]), "commit": d["commit_no"],
        }}
        self.ctx.broadcast(self._others(), {"t": "dvc_req", "view": target_view})

    def _on_dvc_req(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        if msg["view"] <= d["view"]:
            return
        d["view"] = msg["view"]  # stop serving older views
        self.ctx.send(src, {
            "t": "dvc", "view": msg["view"], "last_normal": d["last_normal"],
            "log": list(d["log"]), "commit": d["commit_no"],
        })

    def _on_dvc(self, src: int, msg: dict) -> None:
        if msg["view"] != self.dvc_view:
            return
        self.dvc_replies[src] = {
            "last_normal": msg["last_normal"], "log": msg["log"], "commit": msg["commit"],
        }
        if len(self.dvc_replies) < self.majority:
            return
        d = self.ctx.durable
        new_view = self.dvc_view
        self.dvc_view = None
        best = max(self.dvc_replies.values(), key=lambda r: (r["last_normal"], len(r["log"])))
        d["log"] = list(best["log"])
        d["commit_no"] = max(r["commit"] for r in self.dvc_replies.values())
        d["view"] = new_view
        d["last_normal"] = new_view
        self.dvc_replies = {}
        marker = WriteOp(self.ctx.node_id, d["wseq"], None, Metadata(view=new_view))
        d["wseq"] += 1
        self.ctx.emit_pass(
            path=(Stage.PRE,),
            rtts_per_stage={Stage.PRE: 1.5},
            quorums=(Quorum(frozenset(self.ctx.writers()), Stage.PRE),),
            converged=frozenset({marker}),
            arbiter_kind=ArbiterKind.STATIC,
            case="changing",
        )
        self._apply_committed(emit=True)
        self.ctx.broadcast(self._others(), {
            "t": "start_view", "view": new_view, "log": list(d["log"]), "commit": d["commit_no"],
        })
        for op_id, rec in sorted(d["pending"].items()):
            if op_id[0] == self.ctx.node_id:
                self._leader_handle(self.ctx.node_id, ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]))

    def _on_start_view(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        if msg["view"] < d["view"]:
            return
        d["view"] = msg["view"]
        d["last_normal"] = msg["view"]
        d["log"] = list(msg["log"])
        d["commit_no"] = max(d["commit_no"], min(msg["commit"], len(d["log"])))
        self._apply_committed()

    def _adopt_state(self, msg: dict) -> None:
        d = self.ctx.durable
        if (msg["last_normal"], len(msg["log"])) >= (d["last_normal"], len(d["log"])):
            d["log"] = list(msg["log"])
            d["last_normal"] = msg["last_normal"]
            d["view"] = max(d["view"], msg["view"])
            d["commit_no"] = max(d["commit_no"], min(msg["commit"], len(d["log"])))
            self._apply_committed()

    # -- timers --

    def on_timer(self, payload: dict) -> None:
        t = payload["t"]
        if t == "op_retry":
            op_id = tuple(payload["op"])
            rec = self.ctx.durable["pending"].get(op_id)
            if rec is None:
                return
            op = ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"])
            view = self.ctx.durable["view"]
            seen_view, retries = self.op_attempts.get(op_id, (view, 0))
            if seen_view != view:
                retries = 0  # a view change happened; give the new leader a chance
            retries += 1
            self.op_attempts[op_id] = (view, retries)
            if not self._is_leader() and retries >= 2:
                # Current leader was already retried once in this view: rotate.
                target = view + 1 + (retries - 2) % (self.ctx.n - 1)
                if self._leader_of(target) == self.ctx.node_id:
                    self._maybe_drive_view_change(target)
                else:
                    self.ctx.send(self._leader_of(target), {"t": "nudge", "view": target})
            self._submit(op)
        elif t == "read_to":
            rid = tuple(payload["rid"])
            if rid in self.reads:
                state = self.reads.pop(rid)
                self._leader_read(state["src"], state["op"])

    # -- reads: view confirmation round --

    def _leader_read(self, src: int, op: ClientOp) -> None:
        rid = (self.ctx.node_id, self.read_seq)
        self.read_seq += 1
        self.reads[rid] = {"src": src, "op": op, "acks": {self.ctx.node_id}}
        self.ctx.broadcast(self._others(), {"t": "view_ping", "view": self.ctx.durable["view"], "rid": list(rid)})
        self.ctx.set_timer(self.retry_base * 4, {"t": "read_to", "rid": list(rid)})

    def _on_view_pong(self, src: int, msg: dict) -> None:
        rid = tuple(msg["rid"])
        state = self.reads.get(rid)
        if state is None or msg["view"] != self.ctx.durable["view"]:
            return
        state["acks"].add(src)
        if len(state["acks"]) >= self.majority:
            del self.reads[rid]
            result = "read:" + render_register(self.ctx.register())
            op = state["op"]
            if state["src"] == self.ctx.node_id:
                rec = self.ctx.durable["pending"].pop(op.op_id, None)
                if rec is not None:
                    self.ctx.respond(op, result)
            else:
                self.ctx.send(state["src"], {"t": "read_result", "op": list(op.op_id), "result": result})
