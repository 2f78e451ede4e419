from syncframe.checkers import detect_split_brain
from syncframe.mechanisms.paxos import BrokenSubMajorityPaxosNode, PaxosNode
from syncframe.model import ProjectionKind, Stage, project
from syncframe.sim import FaultEvent, FaultPlan, SimConfig, WorkItem, World


def run(node_cls, n, seed, workload, fault_plan=FaultPlan(), projection=ProjectionKind.LOG_SEQUENCE,
        min_delay=1, max_delay=2):
    cfg = SimConfig(n=n, seed=seed, min_delay=min_delay, max_delay=max_delay,
                    fault_plan=fault_plan, max_ticks=60_000)
    return World(cfg, node_cls, workload, projection=projection).run()


class FakeCtx:
    """Bare acceptor-level harness: captures outbound messages."""

    def __init__(self, n=3, node_id=1):
        self.node_id = node_id
        self.n = n
        self.durable = {}
        self.params = {}
        self.sent = []

    def writers(self):
        return range(self.n)

    def send(self, dst, payload):
        self.sent.append((dst, payload))

    def broadcast(self, dsts, payload):
        for d in sorted(dsts):
            self.send(d, payload)

    def set_timer(self, delay, payload):
        pass

    def rand_range(self, lo, hi):
        return lo


def test_acceptor_promises_higher_ballot_and_reports_accepted():
    ctx = FakeCtx()
    node = PaxosNode(ctx)
    node.on_message(0, {"t": "prepare", "slot": 0, "ballot": 3})
    node.on_message(0, {"t": "accept", "slot": 0, "ballot": 3,
                        "write": {"w": 0, "s": 0, "v": "old"}})
    ctx.sent.clear()
    node.on_message(2, {"t": "prepare", "slot": 0, "ballot": 5})
    dst, msg = ctx.sent[-1]
    assert dst == 2 and msg["t"] == "promise"
    assert msg["acc_ballot"] == 3 and msg["acc_write"]["v"] == "old"


def test_acceptor_rejects_stale_accept():
    ctx = FakeCtx()
    node = PaxosNode(ctx)
    node.on_message(0, {"t": "prepare", "slot": 0, "ballot": 5})
    ctx.sent.clear()
    node.on_message(2, {"t": "accept", "slot": 0, "ballot": 3,
                        "write": {"w": 2, "s": 0, "v": "x"}})
    dst, msg = ctx.sent[-1]
    assert msg["t"] == "nack" and msg["seen"] == 5


def test_uncontended_write_takes_one_round_per_stage():
    res = run(PaxosNode, 3, 7, [WorkItem(0, 1, "write", "k", "v")], min_delay=1, max_delay=1)
    assert len(res.passes) == 1
    p = res.passes[0]
    assert p.path == (Stage.PRE, Stage.EXE)
    assert p.rtts_per_stage == {Stage.PRE: 1.0, Stage.EXE: 1.0}
    assert [q.size for q in p.quorums] == [3, 2]
    assert all(project(r) == ("v",) for r in res.registers)


def test_contending_proposers_all_converge_with_equal_logs():
    for seed in range(12):
        wl = [WorkItem(i, 1, "write", "k", f"v{i}") for i in range(5)]
        res = run(PaxosNode, 5, seed, wl, max_delay=3)
        assert not res.unfinished, f"seed {seed}"
        logs = [tuple(w.op_id for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs), f"seed {seed}"
        assert len(logs[0]) == 5


def test_multi_proposer_freedom_reaches_every_writer():
    wl = [WorkItem(i, 1 + 60 * i, "write", "k", f"v{i}") for i in range(5)]
    res = run(PaxosNode, 5, 0, wl, min_delay=1, max_delay=1)
    writers = {w.writer_id for p in res.passes for w in p.converged}
    assert writers == set(range(5))


def test_crashed_proposer_resumes_after_recovery():
    plan = FaultPlan((FaultEvent(4, "crash", writer=0), FaultEvent(200, "recover", writer=0)))
    wl = [WorkItem(0, 1, "write", "k", "a"), WorkItem(1, 50, "write", "k", "b")]
    for seed in range(8):
        res = run(PaxosNode, 3, seed, wl, fault_plan=plan)
        assert not res.unfinished, f"seed {seed}"
        logs = [tuple(w.value for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs) and sorted(logs[0]) == ["a", "b"]


def test_agreement_prefix_compatible_at_every_seed():
    for seed in range(20):
        wl = [WorkItem(i % 3, 1 + 17 * i, "write", "k", f"v{i}") for i in range(5)]
        res = run(PaxosNode, 3, seed, wl, max_delay=3)
        verdict = detect_split_brain(res.registers, {0, 1, 2})
        assert verdict.passed, f"seed {seed}: {verdict.witness}"


def test_submajority_variant_splits_under_partition():
    plan = FaultPlan((FaultEvent(0, "partition", groups=(frozenset({0, 1}), frozenset({2, 3}))),))
    wl = [WorkItem(0, 1, "write", "k", "left"), WorkItem(2, 1, "write", "k", "right")]
    res = run(BrokenSubMajorityPaxosNode, 4, 1, wl, fault_plan=plan,
              projection=ProjectionKind.LAST_WRITE)
    assert project(res.registers[0]) == "left" and project(res.registers[2]) == "right"
    verdict = detect_split_brain(res.registers, {0, 1, 2, 3})
    assert not verdict.passed


def test_true_majority_blocks_both_sides_under_same_partition():
    plan = FaultPlan((FaultEvent(0, "partition", groups=(frozenset({0, 1}), frozenset({2, 3}))),))
    wl = [WorkItem(0, 1, "write", "k", "left"), WorkItem(2, 1, "write", "k", "right")]
    cfg = SimConfig(n=4, seed=1, min_delay=1, max_delay=2, fault_plan=plan, max_ticks=4000)
    res = World(cfg, PaxosNode, wl, projection=ProjectionKind.LAST_WRITE).run()
    assert all(len(r) == 0 for r in res.registers)  # 2 < 3: nobody commits
    assert len(res.unfinished) == 2


def test_submajority_split_at_n5_threshold2():
    plan = FaultPlan((FaultEvent(0, "partition",
                                 groups=(frozenset({0, 1}), frozenset({2, 3, 4}))),))
    wl = [WorkItem(0, 1, "write", "k", "small"), WorkItem(2, 1, "write", "k", "big")]
    res = run(BrokenSubMajorityPaxosNode, 5, 2, wl, fault_plan=plan,
              projection=ProjectionKind.LAST_WRITE)
    verdict = detect_split_brain(res.registers, set(range(5)))
    assert not verdict.passed
