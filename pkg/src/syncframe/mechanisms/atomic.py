"""Compare-and-swap against one shared register.

Shared-memory model: all writers see a single register and every access is
accounted as a full-size quorum broadcast. The memory endpoint serializes
arrivals, so exactly one of any set of same-generation attempts wins; losers
learn the current length and either retry or abort. The memory itself never
crashes and ignores partitions, which is why this mechanism tolerates n-1
writer failures.
"""

from __future__ import annotations

from ..model import ArbiterKind, ClientOp, Quorum, Stage, WriteOp
from ..sim import MechanismNode, NodeCtx
from .base import wire_to_write, write_to_wire
from .render import render_register


class CasWriterNode(MechanismNode):
    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        d = ctx.durable
        d.setdefault("pending", {})
        d.setdefault("wseq", 0)
        d.setdefault("known_len", 0)
        self.memory = ctx.n  # the shared-memory endpoint id

    def on_client_request(self, op: ClientOp) -> None:
        d = self.ctx.durable
        if op.kind == "read":
            d["pending"][op.op_id] = {"kind": "read", "key": op.key, "value": op.value}
            self.ctx.send(self.memory, {"t": "read_req", "op": list(op.op_id)})
            return
        wseq = d["wseq"]
        d["wseq"] = wseq + 1
        retry = op.kind == "write"  # bare writes loop until they land
        expected = d["known_len"] if op.extra is None else op.extra
        d["pending"][op.op_id] = {
            "kind": op.kind, "key": op.key, "value": op.value, "wseq": wseq, "retry": retry,
        }
        self._attempt(op.op_id, expected)

    def on_recover(self) -> None:
        for op_id, rec in sorted(self.ctx.durable["pending"].items()):
            if rec["kind"] == "read":
                self.ctx.send(self.memory, {"t": "read_req", "op": list(op_id)})
            else:
                self._attempt(op_id, self.ctx.durable["known_len"])

    def _attempt(self, op_id: tuple[int, int], expected: int) -> None:
        rec = self.ctx.durable["pending"][op_id]
        w = WriteOp(self.ctx.node_id, rec["wseq"], rec["value"])
        self.ctx.send(self.memory, {
            "t": "cas_req", "op": list(op_id), "expected": expected,
            "write": write_to_wire(w), "retry": rec["retry"],
        })

    def on_message(self, src: int, msg: dict) -> None:
        d = self.ctx.durable
        t = msg["t"]
        op_id = tuple(msg["op"])
        rec = d["pending"].get(op_id)
        if rec is None:
            return
        if t == "cas_ok":
            d["known_len"] = msg["len"]
            del d["pending"][op_id]
            self.ctx.respond(self._op_of(op_id, rec), "committed")
        elif t == "cas_fail":
            d["known_len"] = msg["len"]
            if rec["retry"]:
                self._attempt(op_id, msg["len"])
            else:
                del d["pending"][op_id]
                self.ctx.respond(self._op_of(op_id, rec), f"failed:{msg['len']}")
        elif t == "read_reply":
            del d["pending"][op_id]
            self.ctx.respond(self._op_of(op_id, rec), "read:" + msg["result"])

    def _op_of(self, op_id: tuple[int, int], rec: dict) -> ClientOp:
        return ClientOp(op_id[0], op_id[1], rec["kind"], rec["key"], rec["value"])


class SharedMemoryNode(MechanismNode):
    """Serialization point for the shared register."""

    def __init__(self, ctx: NodeCtx) -> None:
        super().__init__(ctx)
        # one pass per landed write; losers recorded against the slot they lost
        self.slot_passes: list[dict] = []

    def on_client_request(self, op: ClientOp) -> None:
        raise AssertionError("the memory endpoint takes no client traffic")

    def on_message(self, src: int, msg: dict) -> None:
        t = msg["t"]
        if t == "read_req":
            self.ctx.send(src, {"t": "read_reply", "op": msg["op"],
                                "result": render_register(self.ctx.register())})
            return
        if t != "cas_req":
            return
        cur = len(self.ctx.register())
        if msg["expected"] == cur:
            w = wire_to_write(msg["write"])
            self.ctx.commit(w)
            self.slot_passes.append({"winner": w, "losers": []})
            self.ctx.send(src, {"t": "cas_ok", "op": msg["op"], "len": cur + 1})
        else:
            if not msg["retry"] and 0 <= msg["expected"] < len(self.slot_passes):
                self.slot_passes[msg["expected"]]["losers"].append(wire_to_write(msg["write"]))
            self.ctx.send(src, {"t": "cas_fail", "op": msg["op"], "len": cur})

    def on_finish(self) -> None:
        everyone = frozenset(range(self.ctx.n))
        for entry in self.slot_passes:
            self.ctx.emit_pass(
                path=(Stage.EXE,),
                rtts_per_stage={Stage.EXE: 1.0},
                quorums=(Quorum(everyone, Stage.EXE),),
                converged=frozenset({entry["winner"]}),
                aborted=frozenset(entry["losers"]),
                arbiter_kind=ArbiterKind.DYNAMIC,
                case="-",
            )
