import itertools

from syncframe.mechanisms.base import PriorityTree
from syncframe.mechanisms.epaxos import EPaxosNode, EPaxosPriorityNode, _sccs_reverse_topo
from syncframe.model import ProjectionKind, Stage
from syncframe.sim import FaultEvent, FaultPlan, SimConfig, WorkItem, World


def run(node_cls, n, seed, workload, params=None, fault_plan=FaultPlan(), max_delay=2):
    cfg = SimConfig(n=n, seed=seed, min_delay=1, max_delay=max_delay,
                    fault_plan=fault_plan, max_ticks=60_000)
    return World(cfg, node_cls, workload, projection=ProjectionKind.LOG_SEQUENCE,
                 params=params or {}).run()


def test_non_conflicting_writes_commit_fast_in_one_round_trip():
    wl = [WorkItem(0, 1, "write", "x", "a"), WorkItem(3, 1, "write", "y", "b")]
    res = run(EPaxosNode, 5, 1, wl, max_delay=1)
    assert not res.unfinished
    assert [(p.case, p.total_rtts) for p in res.passes] == [("fast", 1.0), ("fast", 1.0)]
    assert all(p.quorums[0].size == 3 for p in res.passes)  # floor(3*5/4)
    assert all(p.path == (Stage.EXE,) for p in res.passes)


def test_conflicting_writes_take_the_slow_path_with_identical_final_order():
    for seed in range(20):
        wl = [WorkItem(i, 1, "write", "k", f"v{i}") for i in range(5)]
        res = run(EPaxosNode, 5, seed, wl, max_delay=3)
        assert not res.unfinished, f"seed {seed}"
        slow = [p for p in res.passes if p.case == "slow"]
        assert slow, f"seed {seed} produced no slow pass"
        for p in slow:
            assert p.total_rtts == 2.0
            assert p.quorums[-1].size == 3  # majority round
        logs = [tuple(w.op_id for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs) and len(logs[0]) == 5, f"seed {seed}"


def test_priority_variant_decides_every_write_in_one_round_trip():
    for seed in range(20):
        wl = [WorkItem(i, 1, "write", "k", f"v{i}") for i in range(5)]
        res = run(EPaxosPriorityNode, 5, seed, wl, max_delay=3)
        assert not res.unfinished, f"seed {seed}"
        assert all(p.total_rtts == 1.0 for p in res.passes), f"seed {seed}"
        logs = [tuple(w.op_id for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs) and len(logs[0]) == 5, f"seed {seed}"


def test_ancestor_orders_before_descendant_on_every_replica():
    # In the default chain tree, writer 0 is an ancestor of writer 3.
    for seed in range(15):
        wl = [WorkItem(3, 1, "write", "k", "B"), WorkItem(0, 1, "write", "k", "A")]
        res = run(EPaxosPriorityNode, 5, seed, wl, max_delay=3)
        for r in res.registers:
            assert [w.value for w in r.series] == ["A", "B"], f"seed {seed}"


def test_custom_priority_tree_param():
    tree = {0: 4, 1: 4, 2: None, 3: 2, 4: 2}  # 2 is the root; 4 above 0 and 1
    for seed in range(10):
        wl = [WorkItem(0, 1, "write", "k", "low"), WorkItem(2, 1, "write", "k", "root")]
        res = run(EPaxosPriorityNode, 5, seed, wl, params={"priority_tree": tree}, max_delay=3)
        for r in res.registers:
            assert [w.value for w in r.series] == ["root", "low"], f"seed {seed}"


def test_sibling_conflicts_break_by_lowest_writer_id():
    tree = {0: None, 1: 0, 2: 0, 3: 0, 4: 0}  # 1..4 are siblings
    for seed in range(10):
        wl = [WorkItem(4, 1, "write", "k", "w4"), WorkItem(1, 1, "write", "k", "w1")]
        res = run(EPaxosPriorityNode, 5, seed, wl, params={"priority_tree": tree}, max_delay=1)
        orders = {tuple(w.value for w in r.series) for r in res.registers}
        assert len(orders) == 1
        order = next(iter(orders))
        if len({p.case for p in res.passes} & {"slow"}) > 0:
            assert order == ("w1", "w4"), f"seed {seed}: {order}"


def test_fast_quorum_ceiling_override():
    wl = [WorkItem(0, 1, "write", "x", "a")]
    res = run(EPaxosNode, 6, 1, wl, params={"fast_quorum_rule": "ceil"}, max_delay=1)
    assert res.passes[0].quorums[0].size == 5  # ceil(18/4)
    res = run(EPaxosNode, 6, 1, wl, max_delay=1)
    assert res.passes[0].quorums[0].size == 4  # floor(18/4)


def test_crashed_command_leader_finishes_after_recovery():
    plan = FaultPlan((FaultEvent(3, "crash", writer=0), FaultEvent(250, "recover", writer=0)))
    wl = [WorkItem(0, 1, "write", "k", "a"), WorkItem(1, 40, "write", "k", "b")]
    for seed in range(8):
        res = run(EPaxosNode, 5, seed, wl, fault_plan=plan, max_delay=3)
        assert not res.unfinished, f"seed {seed}"
        logs = [tuple(w.op_id for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs) and len(logs[0]) == 2, f"seed {seed}"


def test_priority_tree_rejects_cycles_and_no_root():
    import pytest

    from syncframe.mechanisms.base import MechanismError
    with pytest.raises(MechanismError):
        PriorityTree({0: 1, 1: 0})
    with pytest.raises(MechanismError):
        PriorityTree({})
    tree = PriorityTree.chain(4)
    assert tree.is_ancestor(0, 3) and not tree.is_ancestor(3, 0)
    assert tree.sort_key(0) < tree.sort_key(1) < tree.sort_key(3)


def test_scc_order_respects_dependencies():
    # b depends on a; c and d form a cycle depending on b.
    nodes = ["a", "b", "c", "d"]
    edges = {"a": [], "b": ["a"], "c": ["b", "d"], "d": ["c"]}
    comps = _sccs_reverse_topo(nodes, edges)
    assert comps == [["a"], ["b"], ["c", "d"]]


def test_scc_order_matches_brute_force_on_random_graphs():
    import random
    rnd = random.Random(5)
    for _ in range(40):
        nodes = list(range(7))
        edges = {v: sorted({rnd.randrange(7) for _ in range(rnd.randrange(3))} - {v})
                 for v in nodes}
        comps = _sccs_reverse_topo(nodes, edges)
        seen = set()
        for comp in comps:
            for v in comp:
                for dep in edges[v]:
                    assert dep in seen or dep in comp, (edges, comps)
            seen.update(comp)
        assert sorted(itertools.chain(*comps)) == nodes
