from syncframe.checkers import detect_split_brain
from syncframe.mechanisms.vr import VrNode
from syncframe.model import ProjectionKind, Stage
from syncframe.sim import FaultEvent, FaultPlan, SimConfig, WorkItem, World


def run(n, seed, workload, fault_plan=FaultPlan(), max_delay=2, max_ticks=60_000):
    cfg = SimConfig(n=n, seed=seed, min_delay=1, max_delay=max_delay,
                    fault_plan=fault_plan, max_ticks=max_ticks)
    return World(cfg, VrNode, workload, projection=ProjectionKind.LOG_SEQUENCE).run()


def test_round_robin_view_to_leader():
    node = VrNode.__new__(VrNode)

    class C:
        n = 5
    node.ctx = C()
    assert node._leader_of(7) == 2
    assert node._leader_of(0) == 0
    assert node._leader_of(4) == 4


def test_writes_serve_through_initial_leader_without_any_coordination_round():
    wl = [WorkItem(i, 1 + 40 * i, "write", "k", f"v{i}") for i in range(5)]
    res = run(5, 3, wl)
    assert not res.unfinished
    assert {p.case for p in res.passes} == {"normal"}
    assert all(p.path == (Stage.EXE,) and p.total_rtts == 1.0 for p in res.passes)
    assert all(q.size == 5 for p in res.passes for q in p.quorums)
    writers = {w.writer_id for p in res.passes for w in p.converged if not w.is_null()}
    assert writers == {0}


def test_view_change_costs_one_and_a_half_round_trips():
    plan = FaultPlan((FaultEvent(5, "crash", writer=0),))
    wl = [WorkItem(1, 10, "read", "k", None)]
    for seed in range(10):
        res = run(5, seed, wl, fault_plan=plan)
        assert not res.unfinished, f"seed {seed}"
        changing = [p for p in res.passes if p.case == "changing"]
        assert changing, f"seed {seed}"
        for p in changing:
            assert p.path == (Stage.PRE,)
            assert p.rtts_per_stage == {Stage.PRE: 1.5}
            assert [q.size for q in p.quorums] == [5]
            marker = next(iter(p.converged))
            assert marker.is_null() and marker.meta.view is not None


def test_writes_continue_after_leader_crash():
    plan = FaultPlan((FaultEvent(60, "crash", writer=0),))
    wl = [WorkItem(0, 1, "write", "k", "a"),
          WorkItem(1, 90, "write", "k", "b"),
          WorkItem(2, 120, "write", "k", "c")]
    for seed in range(10):
        res = run(5, seed, wl, fault_plan=plan)
        assert not res.unfinished, f"seed {seed}"
        live = [r for r in res.registers if r.replica_id != 0]
        logs = [tuple(w.value for w in r.series) for r in live]
        assert all(log == logs[0] for log in logs) and len(logs[0]) == 3, f"seed {seed}"
        assert detect_split_brain(res.registers, {1, 2, 3, 4}).passed


def test_stale_view_messages_are_ignored():
    plan = FaultPlan((FaultEvent(40, "crash", writer=0), FaultEvent(300, "recover", writer=0)))
    wl = [WorkItem(0, 1, "write", "k", "a"),
          WorkItem(1, 60, "write", "k", "b"),
          WorkItem(0, 350, "write", "k", "late")]
    for seed in range(6):
        res = run(5, seed, wl, fault_plan=plan)
        assert not res.unfinished, f"seed {seed}"
        logs = [tuple(w.value for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs) and len(logs[0]) == 3, f"seed {seed}"
