import pytest

from syncframe.mechanisms.paxos import PaxosNode
from syncframe.model import ClientOp, ProjectionKind
from syncframe.sim import (
    FaultEvent,
    FaultPlan,
    FaultPlanError,
    MechanismNode,
    NothingPending,
    SimConfig,
    SimTimeout,
    WorkItem,
    World,
)


class Echo(MechanismNode):
    """Records deliveries; replies when the payload asks for it."""

    def on_start(self):
        self.got = []

    def on_client_request(self, op: ClientOp):
        self.ctx.respond(op, "committed")

    def on_message(self, src, msg):
        self.got.append((self.ctx.now, src, msg["t"]))
        if msg.get("reply"):
            self.ctx.send(src, {"t": "ack"})

    def on_recover(self):
        self.got = []


def world(n=3, seed=0, **kw):
    defaults = dict(min_delay=1, max_delay=1, max_ticks=1000)
    defaults.update(kw)
    return World(SimConfig(n=n, seed=seed, **defaults), Echo, [])


def test_fixed_delay_delivery_tick():
    w = world()
    w.nodes[0].ctx.send(1, {"t": "ping"})
    env = w.step()
    assert len(env) == 1 and env[0].deliver_tick == 1
    assert w.nodes[1].got == [(1, 0, "ping")]


def test_drop_prob_one_never_delivers():
    w = world(drop_prob=1.0)
    w.nodes[0].ctx.send(1, {"t": "ping"})
    with pytest.raises(NothingPending):
        w.step()
    assert any("|drop|" in line for line in w.trace_lines)


def test_partition_blocks_cross_group():
    plan = FaultPlan((FaultEvent(0, "partition", groups=(frozenset({0, 1}), frozenset({2}))),))
    w = world(fault_plan=plan)
    w.step()  # apply the partition
    w.nodes[0].ctx.send(2, {"t": "ping"})
    w.nodes[0].ctx.send(1, {"t": "ping"})
    w.step()
    assert w.nodes[2].got == []
    assert w.nodes[1].got == [(1, 0, "ping")]
    assert any("partition_drop" in line for line in w.trace_lines)


def test_same_tick_delivery_order_is_src_then_seq():
    w = world(n=4)
    w.nodes[2].ctx.send(3, {"t": "from2"})
    w.nodes[0].ctx.send(3, {"t": "from0"})
    w.step()
    assert [g[2] for g in w.nodes[3].got] == ["from0", "from2"]


def test_fault_applies_before_delivery_at_same_tick():
    plan = FaultPlan((FaultEvent(1, "crash", writer=1),))
    w = world(fault_plan=plan)
    w.nodes[0].ctx.send(1, {"t": "ping"})
    w.step()
    assert w.nodes[1].got == []
    assert any("down_drop" in line for line in w.trace_lines)


def test_crashed_sender_cannot_send():
    plan = FaultPlan((FaultEvent(1, "crash", writer=0),))
    w = world(fault_plan=plan)
    w.step()
    w.nodes[0].ctx.send(1, {"t": "late"})
    with pytest.raises(NothingPending):
        w.step()
    assert any("sender_down" in line for line in w.trace_lines)


def test_crash_cancels_timers_and_recover_resets_state():
    plan = FaultPlan((FaultEvent(2, "crash", writer=0), FaultEvent(5, "recover", writer=0)))
    w = world(fault_plan=plan)
    w.nodes[0].got.append("marker")
    w.nodes[0].ctx.set_timer(4, {"t": "tick"})  # due at 4, while crashed
    w.run()
    assert w.nodes[0].got == []  # fresh instance
    assert not any("|timer|0|" in line for line in w.trace_lines)


def test_quiescence_vs_timeout_are_distinct():
    w = world()
    with pytest.raises(NothingPending):
        w.step()
    w2 = world(max_ticks=3)
    w2.nodes[0].ctx.set_timer(10, {"t": "late"})
    with pytest.raises(SimTimeout):
        w2.step()


def test_fault_plan_validation():
    with pytest.raises(FaultPlanError):
        FaultPlan((FaultEvent(0, "crash", writer=0), FaultEvent(1, "crash", writer=0))).validate(2)
    with pytest.raises(FaultPlanError):
        FaultPlan((FaultEvent(0, "recover", writer=1),)).validate(2)
    with pytest.raises(FaultPlanError):
        FaultPlan((FaultEvent(0, "partition", groups=(frozenset({0}),)),)).validate(2)
    FaultPlan((FaultEvent(0, "partition", groups=(frozenset({0}), frozenset({1}))),)).validate(2)


def paxos_result(seed=3):
    cfg = SimConfig(n=3, seed=seed, min_delay=1, max_delay=2, max_ticks=20000)
    wl = [WorkItem(0, 1, "write", "k", "v")]
    return World(cfg, PaxosNode, wl, projection=ProjectionKind.LAST_WRITE).run()


def test_identical_config_identical_digest():
    a, b = paxos_result(), paxos_result()
    assert a.digest == b.digest
    assert a.trace_lines == b.trace_lines
    assert paxos_result(seed=4).digest != a.digest


def test_empty_workload_is_empty_history():
    cfg = SimConfig(n=3, seed=1, max_ticks=100)
    res = World(cfg, PaxosNode, []).run()
    assert len(res.history) == 0 and res.passes == []


def test_single_paxos_write_commits_on_every_register():
    res = paxos_result()
    from syncframe.model import project
    values = [project(r) for r in res.registers]
    assert values == ["v", "v", "v"]
    commits = [e for e in res.history if e.kind.value == "commit"]
    assert len(commits) == 3 and {e.replica_id for e in commits} == {0, 1, 2}


def test_workload_validation():
    cfg = SimConfig(n=2, seed=0, max_ticks=100)
    from syncframe.sim import SimError
    with pytest.raises(SimError):
        World(cfg, PaxosNode, [WorkItem(5, 1, "write", "k", "v")])
    with pytest.raises(SimError):
        World(cfg, PaxosNode, [WorkItem(0, 500, "write", "k", "v")])
