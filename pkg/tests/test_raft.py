from syncframe.checkers import detect_split_brain
from syncframe.mechanisms.raft import RaftNode
from syncframe.model import ProjectionKind, Stage
from syncframe.sim import FaultEvent, FaultPlan, SimConfig, WorkItem, World


def run(n, seed, workload, fault_plan=FaultPlan(), max_ticks=60_000, max_delay=2):
    cfg = SimConfig(n=n, seed=seed, min_delay=1, max_delay=max_delay,
                    fault_plan=fault_plan, max_ticks=max_ticks)
    return World(cfg, RaftNode, workload, projection=ProjectionKind.LOG_SEQUENCE).run()


class VoteCtx:
    def __init__(self):
        self.node_id = 1
        self.n = 5
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

    def register(self):
        from syncframe.model import Register
        return Register(1, ProjectionKind.LOG_SEQUENCE)


def test_vote_granted_once_per_term():
    ctx = VoteCtx()
    node = RaftNode(ctx)
    node.on_message(0, {"t": "vote_req", "term": 1, "last_idx": -1, "last_term": -1})
    assert ctx.sent[-1][1]["t"] == "vote"
    ctx.sent.clear()
    node.on_message(2, {"t": "vote_req", "term": 1, "last_idx": -1, "last_term": -1})
    assert not any(m["t"] == "vote" for _, m in ctx.sent)


def test_stale_term_append_rejected():
    ctx = VoteCtx()
    node = RaftNode(ctx)
    node.ctx.durable["term"] = 7
    node.on_message(0, {"t": "append", "term": 6, "prev_idx": -1, "prev_term": -1,
                        "entries": [], "commit": -1})
    dst, msg = ctx.sent[-1]
    assert msg["t"] == "append_ack" and msg["ok"] is False and msg["term"] == 7


def test_vote_refused_for_stale_log():
    ctx = VoteCtx()
    node = RaftNode(ctx)
    node.ctx.durable["log"].append({"term": 2, "write": {"w": 1, "s": 0, "v": "x"}, "origin": None})
    node.ctx.durable["term"] = 2
    ctx.sent.clear()
    node.on_message(0, {"t": "vote_req", "term": 3, "last_idx": -1, "last_term": -1})
    assert not any(m["t"] == "vote" for _, m in ctx.sent)


def test_election_majority_then_single_epoch_value_writes():
    wl = [WorkItem(i, 1 + 50 * i, "write", "k", f"v{i}") for i in range(5)]
    for seed in range(10):
        res = run(5, seed, wl)
        assert not res.unfinished, f"seed {seed}"
        electing = [p for p in res.passes if p.case == "electing"]
        assert len(electing) == 1
        assert electing[0].path == (Stage.PRE,)
        assert electing[0].rtts_per_stage == {Stage.PRE: 1.0}
        assert [q.size for q in electing[0].quorums] == [5]
        value_writers = {w.writer_id for p in res.passes for w in p.converged if not w.is_null()}
        assert len(value_writers) == 1, f"seed {seed}: {value_writers}"


def test_value_pass_is_one_exe_round_trip_full_broadcast():
    res = run(3, 2, [WorkItem(0, 1, "write", "k", "v")])
    elected = [p for p in res.passes if p.case == "elected" and not next(iter(p.converged)).is_null()]
    assert elected and all(p.path == (Stage.EXE,) and p.total_rtts == 1.0 for p in elected)
    assert all(q.size == 3 for p in elected for q in p.quorums)


def test_leader_crash_re_elects_and_finishes():
    plan = FaultPlan((FaultEvent(120, "crash", writer=0), FaultEvent(400, "recover", writer=0)))
    wl = [WorkItem(0, 1, "write", "k", "a"),
          WorkItem(1, 140, "write", "k", "b"),
          WorkItem(2, 170, "write", "k", "c")]
    for seed in range(10):
        res = run(5, seed, wl, fault_plan=plan)
        assert not res.unfinished, f"seed {seed}"
        logs = [tuple(w.value for w in r.series) for r in res.registers]
        assert all(log == logs[0] for log in logs) and len(logs[0]) == 3, f"seed {seed}"
        assert detect_split_brain(res.registers, set(range(5))).passed


def test_progress_impossible_beyond_quorum_loss():
    plan = FaultPlan(tuple(FaultEvent(60, "crash", writer=i) for i in (0, 1, 2)))
    wl = [WorkItem(3, 100, "write", "k", "late")]
    res = run(5, 1, wl, fault_plan=plan, max_ticks=8000)
    assert res.unfinished  # no majority remains: expected to stall
    assert detect_split_brain(res.registers, {3, 4}).passed


def test_linearizable_reads_through_leader():
    from syncframe.checkers import check_linearizable
    wl = [WorkItem(0, 1, "write", "k", "a"),
          WorkItem(2, 80, "read", "k", None),
          WorkItem(1, 120, "write", "k", "b"),
          WorkItem(2, 200, "read", "k", None)]
    cfg = SimConfig(n=3, seed=5, min_delay=1, max_delay=2, max_ticks=60_000)
    res = World(cfg, RaftNode, wl, projection=ProjectionKind.LAST_WRITE).run()
    results = {e.op.op_id: e.result for e in res.history.responses().values()}
    # The second read begins after every write has been acknowledged.
    assert results[(2, 1)] == "read:b"
    assert check_linearizable(res.history, ProjectionKind.LAST_WRITE).passed
