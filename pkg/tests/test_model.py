import pytest

from syncframe.model import (
    EMPTY_PROJECTION,
    ArbiterKind,
    Consistency,
    DuplicateCommit,
    InsufficientData,
    Metadata,
    ModelError,
    PassTrace,
    ProjectionKind,
    Quorum,
    Register,
    Stage,
    WriteOp,
    append_committed,
    classify_consistency,
    project,
)


def w(writer, seq, value):
    return WriteOp(writer, seq, value)


def reg(kind, *values):
    r = Register(0, kind)
    for i, v in enumerate(values):
        r = append_committed(r, w(0, i, v))
    return r


def test_project_sum_single_element():
    assert project(reg(ProjectionKind.SUM, "5")) == 5


def test_project_sum_accumulates():
    assert project(reg(ProjectionKind.SUM, "1", "2", "3")) == 6


def test_project_last_write():
    assert project(reg(ProjectionKind.LAST_WRITE, "7", "9")) == "9"


def test_project_empty_last_write_is_distinguished():
    assert project(Register(0, ProjectionKind.LAST_WRITE)) == EMPTY_PROJECTION


def test_project_set_union_and_log():
    assert project(reg(ProjectionKind.SET_UNION, "a", "b", "a")) == frozenset({"a", "b"})
    assert project(reg(ProjectionKind.LOG_SEQUENCE, "a", "b")) == ("a", "b")


def test_project_is_pure():
    r = reg(ProjectionKind.SUM, "1", "2")
    assert project(r) == project(r) == 3
    assert r.series == reg(ProjectionKind.SUM, "1", "2").series


def test_append_grows_and_preserves_prefix():
    r0 = Register(0, ProjectionKind.LOG_SEQUENCE)
    r1 = append_committed(r0, w(0, 0, "a"))
    r2 = append_committed(r1, w(0, 1, "b"))
    assert len(r0) == 0 and len(r1) == 1 and len(r2) == 2
    assert r2.series[: len(r1)] == r1.series


def test_append_duplicate_rejected():
    r = append_committed(Register(0, ProjectionKind.LOG_SEQUENCE), w(0, 0, "a"))
    with pytest.raises(DuplicateCommit):
        append_committed(r, w(0, 0, "a"))


def test_null_write_needs_metadata():
    with pytest.raises(ModelError):
        WriteOp(0, 0, None)
    marker = WriteOp(0, 0, None, Metadata(ballot=3))
    assert marker.is_null()


def test_null_value_distinct_from_empty_string():
    assert not WriteOp(0, 0, "").is_null()


def trace(idx, sizes, writers=None, path=(Stage.EXE,), case="-"):
    ws = writers or [(i, idx * 10 + i) for i in range(sizes)]
    converged = frozenset(WriteOp(a, b, "v") for a, b in ws)
    return PassTrace(
        pass_index=idx,
        path=path,
        rtts_per_stage={Stage.EXE: 1.0},
        quorums=(Quorum(frozenset({0}), Stage.EXE),),
        converged=converged,
        arbiter_kind=ArbiterKind.NONE,
        case=case,
    )


def test_classify_all_singletons_is_linearizable():
    traces = [trace(i, 1) for i in range(3)]
    assert classify_consistency(traces, True) is Consistency.LINEARIZABLE


def test_classify_disjoint_writers_is_sequential():
    t1 = trace(0, 0, writers=[(0, 0), (1, 0), (2, 0)])
    t2 = trace(1, 0, writers=[(0, 1), (3, 0)])
    assert classify_consistency([t1, t2], True) is Consistency.SEQUENTIAL


def test_classify_co_resident_writer_is_eventual():
    t1 = trace(0, 0, writers=[(0, 0), (0, 1), (1, 0), (2, 0)])
    t2 = trace(1, 0, writers=[(i, 5 + i) for i in range(5)] + [(0, 2), (1, 2)])
    assert classify_consistency([t1, t2], False) is Consistency.EVENTUAL


def test_classify_empty_raises():
    with pytest.raises(InsufficientData):
        classify_consistency([], True)


def test_pass_trace_rejects_bad_paths():
    with pytest.raises(ModelError):
        PassTrace(0, (Stage.EXE, Stage.PRE), {}, (), frozenset({w(0, 0, "v")}))


def test_pass_trace_rejects_overlapping_sets():
    shared = w(0, 0, "v")
    with pytest.raises(ModelError):
        PassTrace(0, (Stage.EXE,), {Stage.EXE: 1.0},
                  (Quorum(frozenset({0}), Stage.EXE),),
                  frozenset({shared}), aborted=frozenset({shared}))


def test_pass_trace_rtts_must_be_half_steps():
    with pytest.raises(ModelError):
        PassTrace(0, (Stage.EXE,), {Stage.EXE: 0.3},
                  (Quorum(frozenset({0}), Stage.EXE),), frozenset({w(0, 0, "v")}))
