"""Canonical case-covering workloads and adversarial fault campaigns.

Profile derivation needs every labeled case of a mechanism exercised at
least once under conditions where the table numbers are attainable, so these
runs stagger writes to avoid incidental contention except where a case
demands it (conflicting keys for the slow path, a crashed leader for a view
change).

Campaigns rehearse a run without faults first, then sample crash times
anchored at observed pass activity: just after coordination completes, mid
value-round, and at quiescence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .checkers import Verdict, check_sec, detect_progress, detect_split_brain
from .mechanisms import CRDT_KINDS, MechanismKind, build_world_kwargs
from .model import PassTrace, ProjectionKind
from .rng import SplitMix64
from .sim import FaultEvent, FaultPlan, RunResult, SimConfig, WorkItem, World


@dataclass
class RunSpec:
    config: SimConfig
    workload: list[WorkItem]
    kind: MechanismKind
    params: dict = field(default_factory=dict)
    projection: ProjectionKind = ProjectionKind.LOG_SEQUENCE


def execute(spec: RunSpec) -> RunResult:
    kwargs = build_world_kwargs(spec.kind, spec.params)
    world = World(spec.config, workload=spec.workload, projection=spec.projection,
                  params=spec.params, **kwargs)
    return world.run()


# -- canonical profile runs --

def profile_runs(kind: MechanismKind, n: int, seed: int = 0) -> list[RunSpec]:
    kind = MechanismKind(kind)
    base = dict(n=n, seed=seed, min_delay=1, max_delay=1, max_ticks=60_000)
    if kind in (MechanismKind.PAXOS, MechanismKind.BROKEN_SUBMAJORITY_PAXOS):
        wl = [WorkItem(i, 1 + 60 * i, "write", "k", f"v{i}") for i in range(n)]
        return [RunSpec(SimConfig(**base), wl, kind)]
    if kind is MechanismKind.RAFT:
        wl = [WorkItem(i, 1 + 60 * i, "write", "k", f"v{i}") for i in range(n)]
        return [RunSpec(SimConfig(**base), wl, kind)]
    if kind is MechanismKind.VR:
        normal = [WorkItem(i, 1 + 40 * i, "write", "k", f"v{i}") for i in range(n)]
        # Case coverage for a leader change, driven by a read so that no
        # value-write converges outside the measured epoch.
        change_plan = FaultPlan((FaultEvent(5, "crash", writer=0),))
        change = [WorkItem(1, 10, "read", "k", None)]
        return [
            RunSpec(SimConfig(**base), normal, kind),
            RunSpec(SimConfig(**{**base, "fault_plan": change_plan}), change, kind),
        ]
    if kind in (MechanismKind.EPAXOS, MechanismKind.EPAXOS_PRIORITY):
        fast = [WorkItem(i, 1, "write", f"key{i}", f"v{i}") for i in range(n)]
        slow = [WorkItem(i, 1, "write", "shared", f"w{i}") for i in range(min(3, n))]
        return [
            RunSpec(SimConfig(**base), fast, kind),
            RunSpec(SimConfig(**{**base, "seed": seed + 1}), slow, kind),
        ]
    if kind in CRDT_KINDS:
        wl = [WorkItem(0, 1, "write", "c", "1"), WorkItem(0, 2, "write", "c", "2")]
        wl += [WorkItem(i, 1 + 3 * i, "write", "c", "1") for i in range(1, n)]
        proj = ProjectionKind.SUM if kind is MechanismKind.CRDT_GCOUNTER else ProjectionKind.SET_UNION
        return [RunSpec(SimConfig(**base), wl, kind, projection=proj)]
    if kind is MechanismKind.ATOMIC_CAS:
        wl = [WorkItem(i, 1, "write", "k", f"v{i}") for i in range(n)]
        return [RunSpec(SimConfig(**base), wl, kind)]
    raise ValueError(f"no canonical workload for {kind}")


def profile_traces(kind: MechanismKind, n: int, seed: int = 0) -> list[PassTrace]:
    traces: list[PassTrace] = []
    for spec in profile_runs(kind, n, seed):
        traces.extend(execute(spec).passes)
    return traces


# -- fault campaigns --

@dataclass
class CampaignRun:
    seed: int
    progress: Verdict
    safety: Verdict
    digest: str


@dataclass
class CampaignSummary:
    kind: MechanismKind
    n: int
    f: int
    runs: int = 0
    progress_failures: int = 0
    safety_failures: int = 0
    details: list[CampaignRun] = field(default_factory=list)

    def line(self) -> str:
        return (f"{self.kind.value}|n={self.n}|f={self.f}|runs={self.runs}|"
                f"progress_failures={self.progress_failures}|safety_failures={self.safety_failures}")


_RECOVERY_WINDOW = 260


def _campaign_workload(kind: MechanismKind, n: int) -> list[WorkItem]:
    if kind in CRDT_KINDS:
        return [WorkItem(i, 1 + 25 * i, "write", "c", "1") for i in range(n)]
    return [WorkItem(i, 1 + 45 * i, "write", "k", f"v{i}") for i in range(n)]


def _phase_anchors(result: RunResult) -> list[int]:
    """Crash-time anchors: around each completed pass, plus quiescence."""
    anchors = []
    last = 1
    for line in result.trace_lines:
        tick_s, kind_tag = line.split("|", 2)[:2]
        tick = int(tick_s)
        last = max(last, tick)
        if kind_tag == "pass":
            anchors += [max(1, tick - 2), tick, tick + 2]
    anchors.append(last + 10)
    return sorted(set(anchors))


def campaign_run(kind: MechanismKind, n: int, f: int, seed: int,
                 sim_seed: int = 0) -> CampaignRun:
    kind = MechanismKind(kind)
    wl = _campaign_workload(kind, n)
    proj = ProjectionKind.SUM if kind is MechanismKind.CRDT_GCOUNTER else (
        ProjectionKind.SET_UNION if kind is MechanismKind.CRDT_ORSET else ProjectionKind.LOG_SEQUENCE)
    base = dict(n=n, seed=sim_seed, min_delay=1, max_delay=3, max_ticks=60_000)
    rehearsal = execute(RunSpec(SimConfig(**base), wl, kind, projection=proj))
    anchors = _phase_anchors(rehearsal)

    rng = SplitMix64(seed * 0x9E3779B9 + 17)
    writers = list(range(n))
    targets = []
    for _ in range(f):
        pick = rng.choice([w for w in writers if w not in targets])
        targets.append(pick)
    events = []
    for w in sorted(targets):
        tick = anchors[rng.next_u64() % len(anchors)] + rng.randrange(0, 3)
        events.append(FaultEvent(tick, "crash", writer=w))
        events.append(FaultEvent(tick + _RECOVERY_WINDOW, "recover", writer=w))
    plan = FaultPlan(tuple(sorted(events, key=lambda e: (e.tick, e.action))))
    cfg = SimConfig(**{**base, "fault_plan": plan})
    result = execute(RunSpec(cfg, wl, kind, projection=proj))

    progress = detect_progress(result.history, len(wl), cfg.max_ticks)
    if kind in CRDT_KINDS:
        safety = check_sec(result.registers, result.delivered)
    else:
        safety = detect_split_brain(result.registers, set(range(n)))
    return CampaignRun(seed, progress, safety, result.digest)


def broken_partition_run(seed: int) -> CampaignRun:
    """The crafted two-group scenario: both halves commit different values."""
    n = 4
    plan = FaultPlan((FaultEvent(0, "partition",
                                 groups=(frozenset({0, 1}), frozenset({2, 3}))),))
    cfg = SimConfig(n=n, seed=seed, min_delay=1, max_delay=2, fault_plan=plan, max_ticks=30_000)
    wl = [WorkItem(0, 1, "write", "k", "left"), WorkItem(2, 1, "write", "k", "right")]
    result = execute(RunSpec(cfg, wl, MechanismKind.BROKEN_SUBMAJORITY_PAXOS,
                             projection=ProjectionKind.LAST_WRITE))
    progress = detect_progress(result.history, len(wl), cfg.max_ticks)
    safety = detect_split_brain(result.registers, set(range(n)))
    return CampaignRun(seed, progress, safety, result.digest)


def fault_campaign(kind: MechanismKind, n: int, f: int, seeds: list[int],
                   jobs: int = 1) -> CampaignSummary:
    kind = MechanismKind(kind)
    if f > n - 1:
        raise ValueError("cannot crash every writer")
    summary = CampaignSummary(kind, n, f)

    def one(seed: int) -> CampaignRun:
        if kind is MechanismKind.BROKEN_SUBMAJORITY_PAXOS:
            return broken_partition_run(seed)
        return campaign_run(kind, n, f, seed)

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_campaign_cell, [(kind.value, n, f, s) for s in seeds]))
    else:
        runs = [one(s) for s in seeds]
    for run in runs:
        summary.runs += 1
        summary.details.append(run)
        if not run.progress.passed:
            summary.progress_failures += 1
        if not run.safety.passed:
            summary.safety_failures += 1
    return summary


def _campaign_cell(args: tuple) -> CampaignRun:
    kind, n, f, seed = args
    kind = MechanismKind(kind)
    if kind is MechanismKind.BROKEN_SUBMAJORITY_PAXOS:
        return broken_partition_run(seed)
    return campaign_run(kind, n, f, seed)
