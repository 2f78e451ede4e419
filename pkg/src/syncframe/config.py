"""Run configuration: a single versioned JSON document.

Pydantic models validate the document and convert to the simulator's native
types; validation failures carry field paths for exit-code-2 diagnostics.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from .mechanisms import MechanismKind
from .model import ProjectionKind
from .sim import FaultEvent, FaultPlan, SimConfig, WorkItem

SCHEMA_VERSION = 1

CHECKER_NAMES = ("split_brain", "progress", "linearizable", "sec")


class ConfigError(Exception):
    pass


class FaultEventModel(BaseModel):
    tick: int = Field(ge=0)
    action: Literal["crash", "recover", "partition", "heal"]
    writer: Optional[int] = None
    groups: Optional[list[list[int]]] = None

    @model_validator(mode="after")
    def _shape(self) -> "FaultEventModel":
        if self.action in ("crash", "recover") and self.writer is None:
            raise ValueError(f"{self.action} requires a writer")
        if self.action == "partition" and not self.groups:
            raise ValueError("partition requires groups")
        return self

    def to_event(self) -> FaultEvent:
        groups = None
        if self.groups is not None:
            groups = tuple(frozenset(g) for g in self.groups)
        return FaultEvent(self.tick, self.action, self.writer, groups)


class SimModel(BaseModel):
    n: int = Field(ge=1)
    seed: int = 0
    min_delay: int = Field(default=1, ge=1)
    max_delay: int = Field(default=1, ge=1)
    drop_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    max_ticks: int = Field(default=100_000, ge=1)
    fault_plan: list[FaultEventModel] = Field(default_factory=list)

    def to_sim_config(self) -> SimConfig:
        return SimConfig(
            n=self.n, seed=self.seed, min_delay=self.min_delay, max_delay=self.max_delay,
            drop_prob=self.drop_prob, max_ticks=self.max_ticks,
            fault_plan=FaultPlan(tuple(e.to_event() for e in self.fault_plan)),
        )


class WorkItemModel(BaseModel):
    writer: int = Field(ge=0)
    issue_tick: int = Field(ge=0)
    op: Literal["write", "read", "cas", "remove"] = "write"
    key: str = "k"
    value: Optional[str] = None
    expected: Optional[int] = None

    def to_item(self) -> WorkItem:
        return WorkItem(self.writer, self.issue_tick, self.op, self.key, self.value, self.expected)


class MechanismModel(BaseModel):
    kind: str
    params: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known(self) -> "MechanismModel":
        MechanismKind(self.kind)
        return self


class RunConfig(BaseModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    mechanism: MechanismModel
    sim: SimModel
    workload: list[WorkItemModel] = Field(default_factory=list)
    checkers: list[str] = Field(default_factory=lambda: ["split_brain", "progress"])
    projection: str = "last_write"

    @model_validator(mode="after")
    def _cross_checks(self) -> "RunConfig":
        ProjectionKind(self.projection)
        for i, item in enumerate(self.workload):
            if item.writer >= self.sim.n:
                raise ValueError(f"workload[{i}].writer {item.writer} >= n={self.sim.n}")
            if item.issue_tick >= self.sim.max_ticks:
                raise ValueError(f"workload[{i}].issue_tick beyond max_ticks")
        for name in self.checkers:
            if name not in CHECKER_NAMES:
                raise ValueError(f"unknown checker {name!r}; pick from {CHECKER_NAMES}")
        if self.sim.min_delay > self.sim.max_delay:
            raise ValueError("sim.min_delay > sim.max_delay")
        return self


def parse_run_config(text: str) -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(details) from exc
