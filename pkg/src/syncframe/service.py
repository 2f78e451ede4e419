"""HTTP facade over the simulator, profiler, verifier and campaigns.

Stateless: every request is a pure function of its body, so the service can
sit behind any number of workers and results stay reproducible. The CLI is a
thin client of these endpoints.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import __version__
from .analyzer import (
    IncompleteCoverage,
    derive_profile,
    diff_profiles,
    golden_profile,
    profile_records,
    profile_table,
    verify_limits,
)
from .config import ConfigError, RunConfig, parse_run_config
from .mechanisms import MechanismKind
from .runner import (
    EXIT_CHECKER_FAIL,
    EXIT_CONFIG_ERROR,
    EXIT_COVERAGE,
    EXIT_PASS,
    ReplayOutcome,
    replay,
    simulate,
)
from .workloads import fault_campaign, profile_traces


class SimulateRequest(BaseModel):
    config: RunConfig


class SimulateResponse(BaseModel):
    exit_code: int
    digest: str = ""
    verdicts: list[str] = Field(default_factory=list)
    files: dict[str, str] = Field(default_factory=dict)
    timed_out: bool = False
    unfinished: int = 0
    error: str = ""


class ProfileRequest(BaseModel):
    mechanism: str
    n: int = Field(ge=3)
    seed: int = 0


class ProfileResponse(BaseModel):
    exit_code: int
    table: str = ""
    records: list[str] = Field(default_factory=list)
    diffs: list[str] = Field(default_factory=list)
    missing_cases: list[str] = Field(default_factory=list)
    error: str = ""


class VerifyLimitsRequest(BaseModel):
    n_max: int = Field(ge=2, le=12)


class VerifyLimitsResponse(BaseModel):
    exit_code: int
    disagreements: int
    report_lines: list[str]
    check_lines: list[str]


class ReplayRequest(BaseModel):
    trace: str


class ReplayResponse(BaseModel):
    exit_code: int
    expected_digest: str = ""
    actual_digest: str = ""
    first_divergence: str = ""
    error: str = ""


class CampaignRequest(BaseModel):
    mechanism: str
    n: int = Field(ge=1)
    f: int = Field(ge=0)
    seeds: int = Field(default=10, ge=1)
    jobs: int = Field(default=1, ge=1)


class CampaignResponse(BaseModel):
    exit_code: int
    summary: str = ""
    runs: int = 0
    progress_failures: int = 0
    safety_failures: int = 0
    detail_lines: list[str] = Field(default_factory=list)
    error: str = ""


def create_app() -> FastAPI:
    app = FastAPI(title="syncframe", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/mechanisms")
    def mechanisms() -> dict:
        return {"mechanisms": [k.value for k in MechanismKind]}

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate_endpoint(req: SimulateRequest) -> SimulateResponse:
        try:
            artifacts = simulate(req.config)
        except ConfigError as exc:
            return SimulateResponse(exit_code=EXIT_CONFIG_ERROR, error=str(exc))
        return SimulateResponse(
            exit_code=artifacts.exit_code,
            digest=artifacts.digest,
            verdicts=[v.line() for v in artifacts.verdicts],
            files=artifacts.files,
            timed_out=artifacts.timed_out,
            unfinished=artifacts.unfinished,
        )

    @app.post("/profile", response_model=ProfileResponse)
    def profile_endpoint(req: ProfileRequest) -> ProfileResponse:
        try:
            kind = MechanismKind(req.mechanism)
        except ValueError:
            return ProfileResponse(exit_code=EXIT_CONFIG_ERROR,
                                   error=f"unknown mechanism {req.mechanism!r}")
        if kind is MechanismKind.BROKEN_SUBMAJORITY_PAXOS:
            return ProfileResponse(exit_code=EXIT_CONFIG_ERROR,
                                   error="the sub-majority variant is test-only and has no table row")
        traces = profile_traces(kind, req.n, req.seed)
        try:
            derived = derive_profile(kind, traces, req.n)
        except IncompleteCoverage as exc:
            return ProfileResponse(exit_code=EXIT_COVERAGE, missing_cases=exc.missing,
                                   error=str(exc))
        golden = golden_profile(kind, req.n)
        diffs = diff_profiles(derived, golden)
        return ProfileResponse(
            exit_code=EXIT_PASS if not diffs else EXIT_CHECKER_FAIL,
            table=profile_table(kind, derived, req.n),
            records=profile_records(kind, derived),
            diffs=diffs,
        )

    @app.post("/verify-limits", response_model=VerifyLimitsResponse)
    def verify_limits_endpoint(req: VerifyLimitsRequest) -> VerifyLimitsResponse:
        sweep = verify_limits(req.n_max)
        return VerifyLimitsResponse(
            exit_code=EXIT_PASS if sweep.ok else EXIT_CHECKER_FAIL,
            disagreements=sweep.disagreements,
            report_lines=[r.line() for r in sweep.reports],
            check_lines=sweep.check_lines,
        )

    @app.post("/replay", response_model=ReplayResponse)
    def replay_endpoint(req: ReplayRequest) -> ReplayResponse:
        outcome: ReplayOutcome = replay(req.trace)
        return ReplayResponse(
            exit_code=outcome.exit_code,
            expected_digest=outcome.expected_digest,
            actual_digest=outcome.actual_digest,
            first_divergence=outcome.first_divergence,
            error=outcome.error,
        )

    @app.post("/campaign", response_model=CampaignResponse)
    def campaign_endpoint(req: CampaignRequest) -> CampaignResponse:
        try:
            kind = MechanismKind(req.mechanism)
        except ValueError:
            return CampaignResponse(exit_code=EXIT_CONFIG_ERROR,
                                    error=f"unknown mechanism {req.mechanism!r}")
        if req.f > req.n - 1:
            return CampaignResponse(exit_code=EXIT_CONFIG_ERROR,
                                    error="cannot crash every writer")
        summary = fault_campaign(kind, req.n, req.f, list(range(req.seeds)), jobs=req.jobs)
        clean = summary.progress_failures == 0 and summary.safety_failures == 0
        return CampaignResponse(
            exit_code=EXIT_PASS if clean else EXIT_CHECKER_FAIL,
            summary=summary.line(),
            runs=summary.runs,
            progress_failures=summary.progress_failures,
            safety_failures=summary.safety_failures,
            detail_lines=[
                f"seed={d.seed}|{d.progress.line()}|{d.safety.line()}|digest={d.digest}"
                for d in summary.details
            ],
        )

    return app


app = create_app()
