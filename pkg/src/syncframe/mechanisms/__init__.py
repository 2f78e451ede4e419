"""Protocol state machines behind one uniform simulator-node interface.

Each mechanism is a deterministic state machine driven by simulator
callbacks. All of them instrument their execution with pass traces mapping
onto the stage diagram (pre/exe walks, quorums, converged sets).
"""

from __future__ import annotations

import enum

from .base import MechanismError, UnknownCase, PriorityTree, majority, minority, fast_quorum
from ..model import Stage


class MechanismKind(str, enum.Enum):
    PAXOS = "paxos"
    RAFT = "raft"
    VR = "vr"
    EPAXOS = "epaxos"
    EPAXOS_PRIORITY = "epaxos-priority"
    CRDT_GCOUNTER = "crdt-gcounter"
    CRDT_ORSET = "crdt-orset"
    ATOMIC_CAS = "atomic-cas"
    BROKEN_SUBMAJORITY_PAXOS = "broken-submajority-paxos"  # test-only, unsafe by design


LINEARIZABLE_KINDS = frozenset({
    MechanismKind.PAXOS,
    MechanismKind.RAFT,
    MechanismKind.VR,
    MechanismKind.EPAXOS,
    MechanismKind.EPAXOS_PRIORITY,
    MechanismKind.ATOMIC_CAS,
})

CRDT_KINDS = frozenset({MechanismKind.CRDT_GCOUNTER, MechanismKind.CRDT_ORSET})


# Loading table: (stage, case) -> quorum size rule, per mechanism.
_QUORUM_RULES = {
    MechanismKind.PAXOS: {
        (Stage.PRE, "-"): lambda n: n,
        (Stage.EXE, "-"): majority,
    },
    MechanismKind.RAFT: {
        (Stage.PRE, "electing"): lambda n: n,
        (Stage.EXE, "elected"): lambda n: n,
    },
    MechanismKind.VR: {
        (Stage.PRE, "changing"): lambda n: n,
        (Stage.EXE, "normal"): lambda n: n,
    },
    MechanismKind.EPAXOS: {
        (Stage.EXE, "fast"): fast_quorum,
        (Stage.EXE, "slow"): majority,
    },
    MechanismKind.CRDT_GCOUNTER: {
        (Stage.EXE, "min"): lambda n: 1,
        (Stage.EXE, "max"): lambda n: n,
    },
    MechanismKind.ATOMIC_CAS: {
        (Stage.EXE, "-"): lambda n: n,
    },
    MechanismKind.BROKEN_SUBMAJORITY_PAXOS: {
        (Stage.PRE, "-"): lambda n: n,
        (Stage.EXE, "-"): lambda n: n // 2,
    },
}
_QUORUM_RULES[MechanismKind.EPAXOS_PRIORITY] = _QUORUM_RULES[MechanismKind.EPAXOS]
_QUORUM_RULES[MechanismKind.CRDT_ORSET] = _QUORUM_RULES[MechanismKind.CRDT_GCOUNTER]


def quorum_size(kind: MechanismKind, stage: Stage, case: str, n: int) -> int:
    """Loading-table cell for a mechanism, evaluated at n writers."""
    if n < 1:
        raise MechanismError("n must be >= 1")
    rules = _QUORUM_RULES[MechanismKind(kind)]
    try:
        return rules[(Stage(stage), case)](n)
    except KeyError:
        raise UnknownCase(f"{kind} has no ({stage}, {case}) loading case") from None


def declared_fault_tolerance(kind: MechanismKind, n: int) -> int:
    """The fault bound each mechanism claims; campaigns cross-check it."""
    kind = MechanismKind(kind)
    if kind in CRDT_KINDS or kind is MechanismKind.ATOMIC_CAS:
        return n - 1
    if kind is MechanismKind.BROKEN_SUBMAJORITY_PAXOS:
        return 0  # unsafe: exists a partition with two commits even without crashes
    return minority(n)


def build_world_kwargs(kind: MechanismKind, params: dict) -> dict:
    """Simulator wiring for a mechanism: node factory plus world options."""
    from . import atomic, crdt, epaxos, paxos, raft, vr

    kind = MechanismKind(kind)
    if kind is MechanismKind.PAXOS:
        return {"node_factory": paxos.PaxosNode}
    if kind is MechanismKind.BROKEN_SUBMAJORITY_PAXOS:
        return {"node_factory": paxos.BrokenSubMajorityPaxosNode}
    if kind is MechanismKind.RAFT:
        return {"node_factory": raft.RaftNode}
    if kind is MechanismKind.VR:
        return {"node_factory": vr.VrNode}
    if kind is MechanismKind.EPAXOS:
        return {"node_factory": epaxos.EPaxosNode}
    if kind is MechanismKind.EPAXOS_PRIORITY:
        return {"node_factory": epaxos.EPaxosPriorityNode}
    if kind is MechanismKind.CRDT_GCOUNTER:
        return {"node_factory": crdt.GCounterNode}
    if kind is MechanismKind.CRDT_ORSET:
        return {"node_factory": crdt.OrSetNode}
    if kind is MechanismKind.ATOMIC_CAS:
        return {
            "node_factory": atomic.CasWriterNode,
            "memory_factory": atomic.SharedMemoryNode,
            "shared_register": True,
        }
    raise MechanismError(f"unknown mechanism {kind}")


__all__ = [
    "MechanismKind",
    "LINEARIZABLE_KINDS",
    "CRDT_KINDS",
    "MechanismError",
    "UnknownCase",
    "PriorityTree",
    "majority",
    "minority",
    "fast_quorum",
    "quorum_size",
    "declared_fault_tolerance",
    "build_world_kwargs",
]
