"""Executes validated run configs and assembles output artifacts.

Everything here is a pure function of the config document, which is what
makes traces replayable and output files byte-identical across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .checkers import (
    MAX_LIN_OPS,
    Outcome,
    TooLarge,
    Verdict,
    check_linearizable,
    check_sec,
    detect_progress,
    detect_split_brain,
)
from .config import ConfigError, RunConfig, parse_run_config
from .mechanisms import CRDT_KINDS, MechanismKind, build_world_kwargs
from .mechanisms.base import write_to_wire
from .model import EventKind, ProjectionKind
from .sim import RunResult, World

EXIT_PASS = 0
EXIT_CHECKER_FAIL = 1
EXIT_CONFIG_ERROR = 2
EXIT_TIMEOUT = 3
EXIT_COVERAGE = 4
EXIT_REPLAY_DIVERGENCE = 5

TRACE_HEADER = "# syncframe-trace v1"


@dataclass
class SimArtifacts:
    exit_code: int
    digest: str
    verdicts: list[Verdict] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    unfinished: int = 0
    timed_out: bool = False


def run_world(cfg: RunConfig) -> tuple[World, RunResult]:
    kind = MechanismKind(cfg.mechanism.kind)
    kwargs = build_world_kwargs(kind, cfg.mechanism.params)
    world = World(
        cfg.sim.to_sim_config(),
        workload=[w.to_item() for w in cfg.workload],
        projection=ProjectionKind(cfg.projection),
        params=cfg.mechanism.params,
        **kwargs,
    )
    return world, world.run()


def run_checkers(cfg: RunConfig, result: RunResult) -> list[Verdict]:
    kind = MechanismKind(cfg.mechanism.kind)
    live = {i for i in range(cfg.sim.n) if _live_at_end(cfg, i)}
    verdicts = []
    for name in cfg.checkers:
        if name == "split_brain":
            verdicts.append(detect_split_brain(result.registers, live))
        elif name == "progress":
            verdicts.append(detect_progress(result.history, len(cfg.workload), cfg.sim.max_ticks))
        elif name == "sec":
            if kind in CRDT_KINDS and result.delivered is not None:
                verdicts.append(check_sec(result.registers, result.delivered))
            else:
                verdicts.append(Verdict(Outcome.PASS, "sec", "not a replicated-data-type run; vacuous"))
        elif name == "linearizable":
            try:
                verdicts.append(check_linearizable(result.history, ProjectionKind(cfg.projection)))
            except TooLarge:
                verdicts.append(Verdict(
                    Outcome.FAIL, "linearizable",
                    f"history exceeds the {MAX_LIN_OPS}-op bound; shrink the workload",
                ))
    return verdicts


def _live_at_end(cfg: RunConfig, writer: int) -> bool:
    alive = True
    for ev in sorted(cfg.sim.fault_plan, key=lambda e: e.tick):
        if ev.action == "crash" and ev.writer == writer:
            alive = False
        elif ev.action == "recover" and ev.writer == writer:
            alive = True
    return alive


def history_lines(result: RunResult) -> list[str]:
    out = []
    for e in result.history:
        rec: dict = {"time": e.time, "replica": e.replica_id, "kind": e.kind.value}
        if e.op is not None:
            rec["op"] = {"id": list(e.op.op_id), "kind": e.op.kind, "key": e.op.key, "value": e.op.value}
        if e.result is not None:
            rec["result"] = e.result
        if e.write is not None:
            rec["write"] = write_to_wire(e.write)
        out.append(json.dumps(rec, sort_keys=True))
    return out


def pass_lines(result: RunResult) -> list[str]:
    out = []
    for p in result.passes:
        rec = {
            "pass_index": p.pass_index,
            "case": p.case,
            "path": [s.value for s in p.path],
            "rtts": {s.value: v for s, v in p.rtts_per_stage.items()},
            "quorums": [{"stage": q.stage.value, "members": sorted(q.members)} for q in p.quorums],
            "converged": sorted(list(w.op_id) for w in p.converged),
            "aborted": sorted(list(w.op_id) for w in p.aborted),
            "arbiter": p.arbiter_kind.value,
        }
        out.append(json.dumps(rec, sort_keys=True))
    return out


def trace_text(cfg: RunConfig, result: RunResult) -> str:
    lines = [TRACE_HEADER, "# config: " + cfg.model_dump_json()]
    lines.extend(result.trace_lines)
    lines.append(f"# digest: {result.digest}")
    return "\n".join(lines) + "\n"


def simulate(cfg: RunConfig) -> SimArtifacts:
    _, result = run_world(cfg)
    verdicts = run_checkers(cfg, result)
    files = {
        "config.json": cfg.model_dump_json(indent=2) + "\n",
        "trace.log": trace_text(cfg, result),
        "history.jsonl": "\n".join(history_lines(result)) + "\n",
        "passes.jsonl": "\n".join(pass_lines(result)) + "\n",
        "digest.txt": result.digest + "\n",
        "verdicts.txt": "\n".join(v.line() for v in verdicts) + "\n",
    }
    if result.timed_out and result.unfinished:
        code = EXIT_TIMEOUT
    elif all(v.passed for v in verdicts):
        code = EXIT_PASS
    else:
        code = EXIT_CHECKER_FAIL
    return SimArtifacts(
        exit_code=code, digest=result.digest, verdicts=verdicts, files=files,
        unfinished=len(result.unfinished), timed_out=result.timed_out,
    )


@dataclass
class ReplayOutcome:
    exit_code: int
    expected_digest: str = ""
    actual_digest: str = ""
    first_divergence: str = ""
    error: str = ""


def replay(trace: str) -> ReplayOutcome:
    lines = trace.splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        return ReplayOutcome(EXIT_CONFIG_ERROR, error="not a syncframe trace file")
    if len(lines) < 3 or not lines[1].startswith("# config: ") or not lines[-1].startswith("# digest: "):
        return ReplayOutcome(EXIT_CONFIG_ERROR, error="truncated or malformed trace file")
    try:
        cfg = parse_run_config(lines[1][len("# config: "):])
    except ConfigError as exc:
        return ReplayOutcome(EXIT_CONFIG_ERROR, error=str(exc))
    expected_digest = lines[-1][len("# digest: "):].strip()
    recorded = lines[2:-1]
    _, result = run_world(cfg)
    if result.digest == expected_digest and recorded == result.trace_lines:
        return ReplayOutcome(EXIT_PASS, expected_digest, result.digest)
    first = ""
    for i, fresh in enumerate(result.trace_lines):
        old = recorded[i] if i < len(recorded) else "<missing>"
        if old != fresh:
            first = f"line {i + 3}: recorded {old!r} vs replayed {fresh!r}"
            break
    if not first and len(recorded) != len(result.trace_lines):
        first = f"recorded {len(recorded)} lines, replay produced {len(result.trace_lines)}"
    if not first:
        first = f"digest mismatch: {expected_digest} vs {result.digest}"
    return ReplayOutcome(EXIT_REPLAY_DIVERGENCE, expected_digest, result.digest, first)
