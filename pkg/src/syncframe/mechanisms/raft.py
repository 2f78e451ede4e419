"""Leader election plus value replication, at table granularity.

No log compaction, snapshotting or membership change. Elections are
demand-driven: a writer arms its randomized election timer only while it has
unresolved client operations and no responsive leader, so runs quiesce once
the workload drains. A fresh leader commits a null marker entry first, which
also carries prior-term entries to commitment.
"""

from __future__ import annotations

from typing import Optional

from ..model import ArbiterKind, ClientOp, Metadata, Quorum, Stage, WriteOp
from ..sim import MechanismNode, NodeCtx
from .base import majority, write_to_wire, wire_to_write
from .render import render_register

_ELECTION_BASE = 30
_RETRY_BASE = 16


class RaftNode(MechanismNode):
    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        d = ctx.durable
        d.setdefault("term", 0)
        d.setdefault("voted_for", None)
        d.setdefault("log", [])        # entries: {"term", "write": wire|None, "origin": [w, cseq]|None}
        d.setdefault("commit_idx", -1)
        d.setdefault("applied_idx", -1)
        d.setdefault("pending", {})    # op_id -> {"key", "value", "kind"}
        d.setdefault("wseq", 0)
        self.majority = majority(ctx.n)
        self.election_base = ctx.params.get("election_base", _ELECTION_BASE)
        self.retry_base = ctx.params.get("retry_base", _RETRY_BASE)

        self.role = "follower"
        self.leader_id: Optional[int] = None
        self.votes: set[int] = set()
        self.next_idx: dict[int, int] = {}
        self.match_idx: dict[int, int] = {}
        self.election_gen = 0
        self.reads: dict[tuple[int, int], dict] = {}
        self.read_seq = 0
        self.op_target: dict[tuple[int, int], Optional[int]] = {}
        self._applied_ids = {w.op_id for w in ctx.register().series}

    # -- client entry points --

    def on_client_request(self, op: ClientOp) -> None:
        d = self.ctx.durable
        d["pending"][op.op_id] = {"key": op.key, "value": op.value, "kind": op.kind}
        self._submit(op)

    def on_recover(self) -> None:
        self.ctx.broadcast(self._others(), {"t": "pull"})
        d = self.ctx.durable
        for op_id, rec in sorted(d["pending"].items()):
            op = ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"])
            self._arm_op_retry(op)

    def _submit(self, op: ClientOp) -> None:
        if self.role == "leader":
            self._leader_handle(self.ctx.node_id, op)
        elif self.leader_id is not None:
            self.op_target[op.op_id] = self.leader_id
            self.ctx.send(self.leader_id, {
                "t": "forward", "op": list(op.op_id),
                "key": op.key, "value": op.value, "kind": op.kind,
            })
        else:
            self.op_target[op.op_id] = None
            self._arm_election()
        self._arm_op_retry(op)

    def _arm_op_retry(self, op: ClientOp) -> None:
        delay = self.ctx.rand_range(2 * self.retry_base, 4 * self.retry_base)
        self.ctx.set_timer(delay, {"t": "op_retry", "op": list(op.op_id)})

    def _others(self) -> list[int]:
        return [i for i in self.ctx.writers() if i != self.ctx.node_id]

    # -- elections --

    def _arm_election(self) -> None:
        self.election_gen += 1
        delay = self.ctx.rand_range(self.election_base, 2 * self.election_base)
        self.ctx.set_timer(delay, {"t": "election", "gen": self.election_gen})

    def _start_election(self) -> None:
        d = self.ctx.durable
        d["term"] += 1
        d["voted_for"] = self.ctx.node_id
        self.role = "candidate"
        self.leader_id = None
        self.votes = {self.ctx.node_id}
        last_idx = len(d["log"]) - 1
        last_term = d["log"][last_idx]["term"] if last_idx >= 0 else -1
        self.ctx.broadcast(self._others(), {
            "t": "vote_req", "term": d["term"], "last_idx": last_idx, "last_term": last_term,
        })
        self._arm_election()  # re-run on split vote

    def _become_leader(self) -> None:
        d = self.ctx.durable
        self.role = "leader"
        self.leader_id = self.ctx.node_id
        self.next_idx = {p: len(d["log"]) for p in self._others()}
        self.match_idx = {p: -1 for p in self._others()}
        marker = WriteOp(self.ctx.node_id, d["wseq"], None, Metadata(ballot=d["term"]))
        d["wseq"] += 1
        self.ctx.emit_pass(
            path=(Stage.PRE,),
            rtts_per_stage={Stage.PRE: 1.0},
            quorums=(Quorum(frozenset(self.ctx.writers()), Stage.PRE),),
            converged=frozenset({marker}),
            arbiter_kind=ArbiterKind.STATIC,
            case="electing",
        )
        d["log"].append({"term": d["term"], "write": write_to_wire(marker), "origin": None})
        self._replicate_all()
        for op_id, rec in sorted(d["pending"].items()):
            if op_id[0] == self.ctx.node_id:
                self._leader_handle(self.ctx.node_id, ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]))

    # -- leader: appends and commits --

    def _leader_handle(self, src: int, op: ClientOp) -> None:
        if op.kind == "read":
            self._leader_read(src, op)
            return
        d = self.ctx.durable
        origin = list(op.op_id)
        for idx, entry in enumerate(d["log"]):
            if entry["origin"] == origin:
                if idx <= d["commit_idx"]:
                    # Already decided; the earlier completion notice was lost.
                    if origin[0] == self.ctx.node_id:
                        self._complete_op(tuple(origin))
                    else:
                        self.ctx.send(origin[0], {"t": "op_done", "op": origin})
                return
        w = WriteOp(self.ctx.node_id, d["wseq"], op.value)
        d["wseq"] += 1
        d["log"].append({"term": d["term"], "write": write_to_wire(w), "origin": origin})
        self._replicate_all()

    def _replicate_all(self) -> None:
        for peer in self._others():
            self._replicate_to(peer)

    def _replicate_to(self, peer: int) -> None:
        d = self.ctx.durable
        nxt = self.next_idx.get(peer, len(d["log"]))
        prev_idx = nxt - 1
        prev_term = d["log"][prev_idx]["term"] if prev_idx >= 0 else -1
        entries = d["log"][nxt:]
        self.ctx.send(peer, {
            "t": "append", "term": d["term"], "prev_idx": prev_idx, "prev_term": prev_term,
            "entries": entries, "commit": d["commit_idx"],
        })

    def _advance_commit(self) -> None:
        d = self.ctx.durable
        for idx in range(d["commit_idx"] + 1, len(d["log"])):
            votes = 1 + sum(1 for p in self._others() if self.match_idx.get(p, -1) >= idx)
            if votes >= self.majority and d["log"][idx]["term"] == d["term"]:
                d["commit_idx"] = idx
        self._apply_committed(emit=True)
        self.ctx.broadcast(self._others(), {"t": "commit_note", "term": d["term"], "commit": d["commit_idx"]})

    def _apply_committed(self, emit: bool = False) -> None:
        d = self.ctx.durable
        while d["applied_idx"] < d["commit_idx"]:
            d["applied_idx"] += 1
            entry = d["log"][d["applied_idx"]]
            w = wire_to_write(entry["write"])
            if not w.is_null() and w.op_id not in self._applied_ids:
                self.ctx.commit(w)
                self._applied_ids.add(w.op_id)
            if emit:
                self.ctx.emit_pass(
                    path=(Stage.EXE,),
                    rtts_per_stage={Stage.EXE: 1.0},
                    quorums=(Quorum(frozenset(self.ctx.writers()), Stage.EXE),),
                    converged=frozenset({w}),
                    arbiter_kind=ArbiterKind.STATIC,
                    case="elected",
                )
            origin = entry["origin"]
            if origin is not None:
                if origin[0] == self.ctx.node_id:
                    self._complete_op(tuple(origin))
                elif emit:
                    self.ctx.send(origin[0], {"t": "op_done", "op": origin})

    def _complete_op(self, op_id: tuple[int, int]) -> None:
        rec = self.ctx.durable["pending"].pop(op_id, None)
        if rec is not None:
            self.ctx.respond(ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]), "committed")

    # -- message handling --

    def on_message(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        term = msg.get("term")
        if term is not None and term > d["term"]:
            d["term"] = term
            d["voted_for"] = None
            if self.role != "follower":
                self.role = "follower"
        t = msg["t"]
        if t == "vote_req":
            self._on_vote_req(src, msg)
        elif t == "vote":
            self._on_vote(src, msg)
        elif t == "append":
            self._on_append(src, msg)
        elif t == "append_ack":
            self._on_append_ack(src, msg)
        elif t == "commit_note":
            if msg["term"] >= d["term"] and self.role != "leader":
                self.leader_id = src
                d["commit_idx"] = max(d["commit_idx"], min(msg["commit"], len(d["log"]) - 1))
                self._apply_committed()
        elif t == "forward":
            if self.role == "leader":
                op = ClientOp(msg["op"][0], msg["op"][1], msg["kind"], msg["key"], msg["value"])
                self._leader_handle(src, op)
        elif t == "op_done":
            self._complete_op(tuple(msg["op"]))
        elif t == "hb":
            if msg["term"] >= d["term"]:
                self.leader_id = src
                self.ctx.send(src, {"t": "hb_ack", "term": d["term"], "rid": msg["rid"]})
        elif t == "hb_ack":
            self._on_hb_ack(src, msg)
        elif t == "read_result":
            self._complete_read(msg)
        elif t == "pull":
            committed = d["log"][: d["commit_idx"] + 1]
            self.ctx.send(src, {"t": "pull_reply", "log": committed,
                                "commit": d["commit_idx"], "leader": self.leader_id})
        elif t == "pull_reply":
            self._on_pull_reply(msg)

    def _on_vote_req(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        if msg["term"] < d["term"]:
            return
        last_idx = len(d["log"]) - 1
        last_term = d["log"][last_idx]["term"] if last_idx >= 0 else -1
        up_to_date = (msg["last_term"], msg["last_idx"]) >= (last_term, last_idx)
        if d["voted_for"] in (None, src) and up_to_date:
            d["voted_for"] = src
            # Granting a vote defers our own candidacy for one timeout span.
            self.election_gen += 1
            if self._has_pending():
                self._arm_election()
            self.ctx.send(src, {"t": "vote", "term": d["term"]})

    def _on_vote(self, src: int, msg: dict) -> None:
        if self.role != "candidate" or msg["term"] != self.ctx.durable["term"]:
            return
        self.votes.add(src)
        if len(self.votes) >= self.majority:
            self._become_leader()

    def _on_append(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        if msg["term"] < d["term"]:
            self.ctx.send(src, {"t": "append_ack", "term": d["term"], "ok": False, "match": -1})
            return
        self.role = "follower"
        self.leader_id = src
        log = d["log"]
        prev_idx = msg["prev_idx"]
        if prev_idx >= 0 and (prev_idx >= len(log) or log[prev_idx]["term"] != msg["prev_term"]):
            self.ctx.send(src, {"t": "append_ack", "term": d["term"], "ok": False, "match": -1})
            return
        idx = prev_idx + 1
        for entry in msg["entries"]:
            if idx < len(log) and log[idx]["term"] != entry["term"]:
                del log[idx:]
            if idx >= len(log):
                log.append(entry)
            idx += 1
        d["commit_idx"] = max(d["commit_idx"], min(msg["commit"], len(log) - 1))
        self._apply_committed()
        self.ctx.send(src, {"t": "append_ack", "term": d["term"], "ok": True, "match": idx - 1})

    def _on_append_ack(self, src: int, msg: dict) -> None:
        if self.role != "leader" or msg["term"] != self.ctx.durable["term"]:
            return
        if msg["ok"]:
            self.match_idx[src] = max(self.match_idx.get(src, -1), msg["match"])
            self.next_idx[src] = self.match_idx[src] + 1
            self._advance_commit()
        else:
            self.next_idx[src] = max(0, self.next_idx.get(src, 1) - 1)
            self._replicate_to(src)

    def _on_pull_reply(self, msg: dict) -> None:
        # Adopt the peer's committed prefix. Committed entries are final, so
        # overwriting a conflicting uncommitted suffix of our own is safe
        # (the same rule an append from a leader applies).
        if msg.get("leader") is not None and self.leader_id is None:
            self.leader_id = msg["leader"]
        d = self.ctx.durable
        log = d["log"]
        for idx, entry in enumerate(msg["log"]):
            if idx < len(log) and (log[idx]["term"] != entry["term"]
                                   or log[idx]["origin"] != entry["origin"]):
                del log[idx:]
            if idx >= len(log):
                log.append(entry)
        d["commit_idx"] = max(d["commit_idx"], min(msg["commit"], len(log) - 1))
        self._apply_committed()

    # -- timers --

    def on_timer(self, payload: dict) -> None:
        t = payload["t"]
        if t == "election":
            if payload["gen"] != self.election_gen:
                return
            if self._has_pending() and self.role != "leader" and self.leader_id is None:
                self._start_election()
        elif t == "op_retry":
            op_id = tuple(payload["op"])
            rec = self.ctx.durable["pending"].get(op_id)
            if rec is None:
                return
            op = ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"])
            if self.role == "leader":
                self._leader_handle(self.ctx.node_id, op)
                self._replicate_all()
                self._arm_op_retry(op)
            else:
                if self.leader_id is not None and self.op_target.get(op_id) == self.leader_id:
                    self.leader_id = None  # it was asked and did not answer; re-elect
                self._submit(op)
        elif t == "read_to":
            rid = tuple(payload["rid"])
            if rid in self.reads:
                state = self.reads.pop(rid)
                self._leader_read(state["src"], state["op"])

    def _has_pending(self) -> bool:
        return bool(self.ctx.durable["pending"])

    # -- linearizable reads: confirm leadership with a heartbeat round --

    def _leader_read(self, src: int, op: ClientOp) -> None:
        rid = (self.ctx.node_id, self.read_seq)
        self.read_seq += 1
        self.reads[rid] = {"src": src, "op": op, "acks": {self.ctx.node_id}}
        self.ctx.broadcast(self._others(), {"t": "hb", "term": self.ctx.durable["term"], "rid": list(rid)})
        self.ctx.set_timer(self.retry_base * 4, {"t": "read_to", "rid": list(rid)})

    def _on_hb_ack(self, src: int, msg: dict) -> None:
        rid = tuple(msg["rid"])
        state = self.reads.get(rid)
        if state is None or msg["term"] != self.ctx.durable["term"]:
            return
        state["acks"].add(src)
        if len(state["acks"]) >= self.majority:
            del self.reads[rid]
            result = "read:" + render_register(self.ctx.register())
            op = state["op"]
            if state["src"] == self.ctx.node_id:
                self._respond_read(op, result)
            else:
                self.ctx.send(state["src"], {"t": "read_result", "op": list(op.op_id), "result": result})

    def _respond_read(self, op: ClientOp, result: str) -> None:
        if op.op_id in self.ctx.durable["pending"]:
            del self.ctx.durable["pending"][op.op_id]
            self.ctx.respond(op, result)

    def _complete_read(self, msg: dict) -> None:
        op_id = tuple(msg["op"])
        rec = self.ctx.durable["pending"].get(op_id)
        if rec is not None:
            del self.ctx.durable["pending"][op_id]
            self.ctx.respond(ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"]), msg["result"])
