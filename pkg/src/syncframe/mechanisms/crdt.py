"""State-based replicated data types: grow-only counter and observed-remove
set.

Updates apply locally and spread by one-way gossip, so dissemination costs
half a round trip and needs no quorum or arbiter. Replicas that have
delivered the same update set project the same value regardless of order.
"""

from __future__ import annotations

from ..model import ArbiterKind, ClientOp, Quorum, Stage, WriteOp
from ..sim import MechanismNode, NodeCtx
from .base import write_to_wire, wire_to_write
from .render import render_register

_GOSSIP_DELAY = 4


class GossipNode(MechanismNode):
    """Common machinery: local apply, batched one-way gossip, pull on
    recovery."""

    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        d = ctx.durable
        d.setdefault("state", self.fresh_state())
        d.setdefault("oplog", [])      # [{"op": wire, "rec": op record}]
        d.setdefault("delivered", set())
        d.setdefault("wseq", 0)
        self.gossip_delay = ctx.params.get("gossip_delay", _GOSSIP_DELAY)
        self.batch: list[WriteOp] = []
        self.gossip_armed = False

    # subclass hooks
    def fresh_state(self):
        raise NotImplementedError

    def make_record(self, op: ClientOp, wseq: int) -> dict:
        raise NotImplementedError

    def apply_record(self, state, rec: dict) -> None:
        raise NotImplementedError

    def encode_value(self, rec: dict) -> str:
        raise NotImplementedError

    # -- client entry points --

    def on_client_request(self, op: ClientOp) -> None:
        if op.kind == "read":
            self.ctx.respond(op, "read:" + render_register(self.ctx.register()))
            return
        d = self.ctx.durable
        wseq = d["wseq"]
        d["wseq"] = wseq + 1
        rec = self.make_record(op, wseq)
        w = WriteOp(self.ctx.node_id, wseq, self.encode_value(rec))
        self.apply_record(d["state"], rec)
        d["oplog"].append({"op": write_to_wire(w), "rec": rec})
        d["delivered"].add(w.op_id)
        self.ctx.commit(w)
        self.ctx.emit_pass(
            path=(Stage.EXE,),
            rtts_per_stage={Stage.EXE: 0.0},
            quorums=(Quorum(frozenset({self.ctx.node_id}), Stage.EXE),),
            converged=frozenset({w}),
            arbiter_kind=ArbiterKind.NONE,
            case="-",
        )
        self.ctx.respond(op, "committed")
        self.batch.append(w)
        if not self.gossip_armed:
            self.gossip_armed = True
            self.ctx.set_timer(self.gossip_delay, {"t": "gossip"})

    def on_timer(self, payload: dict) -> None:
        if payload["t"] == "gossip":
            self.gossip_armed = False
            self._gossip()

    def on_recover(self) -> None:
        self.ctx.broadcast(self._others(), {"t": "pull"})
        self._gossip(batch=None)

    def _others(self) -> list[int]:
        return [i for i in self.ctx.writers() if i != self.ctx.node_id]

    def _gossip(self, batch="use-pending") -> None:
        d = self.ctx.durable
        payload = {"t": "gossip", "oplog": list(d["oplog"])}
        self.ctx.broadcast(self._others(), payload)
        if batch == "use-pending" and self.batch:
            self.ctx.emit_pass(
                path=(Stage.EXE,),
                rtts_per_stage={Stage.EXE: 0.5},
                quorums=(Quorum(frozenset(self.ctx.writers()), Stage.EXE),),
                converged=frozenset(self.batch),
                arbiter_kind=ArbiterKind.NONE,
                case="-",
            )
            self.batch = []

    def on_message(self, src: int, msg: dict) -> None:
        if msg["t"] == "gossip":
            self._merge(msg["oplog"])
        elif msg["t"] == "pull":
            self.ctx.send(src, {"t": "gossip", "oplog": list(self.ctx.durable["oplog"])})

    def _merge(self, oplog: list[dict]) -> None:
        d = self.ctx.durable
        for item in oplog:
            w = wire_to_write(item["op"])
            if w.op_id in d["delivered"]:
                continue
            d["delivered"].add(w.op_id)
            d["oplog"].append(item)
            self.apply_record(d["state"], item["rec"])
            self.ctx.commit(w)

    def delivered_ops(self):
        return frozenset(self.ctx.durable["delivered"])


class GCounterNode(GossipNode):
    """Per-writer counters; merge is pointwise max, projection is the sum."""

    def fresh_state(self):
        return {i: 0 for i in range(self.ctx.n)}

    def make_record(self, op: ClientOp, wseq: int) -> dict:
        amount = int(op.value)
        if amount < 0:
            raise ValueError("grow-only counter cannot decrease")
        return {"kind": "inc", "writer": self.ctx.node_id, "wseq": wseq, "amount": amount}

    def apply_record(self, state, rec: dict) -> None:
        state[rec["writer"]] = state.get(rec["writer"], 0) + rec["amount"]

    def encode_value(self, rec: dict) -> str:
        return str(rec["amount"])

    def value(self) -> int:
        return sum(self.ctx.durable["state"].values())


class OrSetNode(GossipNode):
    """Adds carry unique tags; a remove covers the tags observed locally."""

    def fresh_state(self):
        return {"adds": set(), "tombs": set()}

    def make_record(self, op: ClientOp, wseq: int) -> dict:
        if op.kind == "remove":
            observed = sorted(
                tag for elem, tag in self.ctx.durable["state"]["adds"] if elem == op.value
            )
            return {"kind": "rm", "elem": op.value, "tags": observed,
                    "writer": self.ctx.node_id, "wseq": wseq}
        return {"kind": "add", "elem": op.value, "tag": (self.ctx.node_id, wseq),
                "writer": self.ctx.node_id, "wseq": wseq}

    def apply_record(self, state, rec: dict) -> None:
        if rec["kind"] == "add":
            state["adds"].add((rec["elem"], tuple(rec["tag"])))
        else:
            state["tombs"].update(tuple(t) for t in rec["tags"])

    def encode_value(self, rec: dict) -> str:
        if rec["kind"] == "add":
            return f"add:{rec['elem']}:{rec['tag'][0]}.{rec['tag'][1]}"
        tags = ",".join(f"{a}.{b}" for a, b in rec["tags"])
        return f"rm:{rec['elem']}:{tags}"

    def value(self) -> frozenset:
        st = self.ctx.durable["state"]
        return frozenset(elem for elem, tag in st["adds"] if tag not in st["tombs"])
