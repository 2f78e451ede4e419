"""Profile derivation and limit verification.

Derives the five-property row of a mechanism from observed pass traces and
diffs it against the golden table shipped as data. Evaluates the loading and
fault-tolerance limit formulas and cross-checks them against brute-force
enumeration over quorum pairs and fault placements.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional

from .checkers import Outcome, Verdict
from .mechanisms import CRDT_KINDS, MechanismKind, declared_fault_tolerance, quorum_size
from .model import (
    Consistency,
    MechanismProfile,
    PassTrace,
    Stage,
    classify_consistency,
)


class AnalyzerError(Exception):
    pass


class IncompleteCoverage(AnalyzerError):
    def __init__(self, missing: list[str]):
        super().__init__(f"missing case coverage: {missing}")
        self.missing = missing


class NonIntersecting(AnalyzerError):
    pass


# -- golden tables --

def load_golden_tables() -> dict:
    text = resources.files("syncframe").joinpath("golden/tables.json").read_text("utf-8")
    return json.loads(text)["mechanisms"]


def eval_cell(expr: str, n: int) -> float:
    value = eval(expr, {"__builtins__": {}}, {"n": n, "ceil": math.ceil, "floor": math.floor})
    return float(value)


def golden_profile(kind: MechanismKind, n: int) -> MechanismProfile:
    row = load_golden_tables()[MechanismKind(kind).value]
    return MechanismProfile(
        consistency=Consistency(row["consistency"]),
        writing_freedom=int(eval_cell(row["writing_freedom"], n)),
        latency_rtt={case: eval_cell(e, n) for case, e in row["latency"].items()},
        loading={case: int(eval_cell(e, n)) for case, e in row["loading"].items()},
        fault_tolerance=int(eval_cell(row["fault_tolerance"], n)),
    )


# -- profile derivation --

def _per_writer_ordered(traces: list[PassTrace]) -> bool:
    last_seen: dict[int, int] = {}
    for t in sorted(traces, key=lambda t: t.pass_index):
        for w in sorted(t.converged, key=lambda w: w.op_id):
            if w.is_null():
                continue
            if last_seen.get(w.writer_id, -1) > w.op_seq:
                return False
            last_seen[w.writer_id] = w.op_seq
    return True


def derive_profile(kind: MechanismKind, traces: Iterable[PassTrace], n: int) -> MechanismProfile:
    """Read the five properties off observed pass traces."""
    kind = MechanismKind(kind)
    traces = list(traces)
    golden_cases = set(load_golden_tables()[kind.value]["latency"])
    observed_cases = {t.case for t in traces}
    missing = sorted(golden_cases - observed_cases)
    if missing:
        raise IncompleteCoverage(missing)

    latency = {
        case: max(t.total_rtts for t in traces if t.case == case)
        for case in sorted(observed_cases)
    }

    if kind in (MechanismKind.PAXOS, MechanismKind.BROKEN_SUBMAJORITY_PAXOS):
        loading = {}
        for stage, label in ((Stage.PRE, "pre"), (Stage.EXE, "exe")):
            sizes = {q.size for t in traces for q in t.quorums if q.stage is stage}
            loading[label] = max(sizes)
    elif kind in CRDT_KINDS:
        sizes = sorted(q.size for t in traces for q in t.quorums)
        loading = {"min": sizes[0], "max": sizes[-1]}
    elif kind in (MechanismKind.EPAXOS, MechanismKind.EPAXOS_PRIORITY):
        fast_sizes = {t.quorums[0].size for t in traces if t.case == "fast"}
        loading = {"fast": max(fast_sizes)}
        if kind is MechanismKind.EPAXOS:
            slow_sizes = {t.quorums[-1].size for t in traces if t.case == "slow"}
            loading["slow"] = max(slow_sizes)
        else:
            # The priority variant never runs the extra round; its slow-path
            # quorum requirement is the declared rule.
            loading["slow"] = quorum_size(kind, Stage.EXE, "slow", n)
    else:
        sizes = {q.size for t in traces for q in t.quorums}
        loading = {"-": max(sizes)}

    freedom_writers = {
        w.writer_id for t in traces for w in t.converged if not w.is_null()
    }
    profile = MechanismProfile(
        consistency=classify_consistency(traces, _per_writer_ordered(traces)),
        writing_freedom=len(freedom_writers),
        latency_rtt=latency,
        loading=loading,
        fault_tolerance=declared_fault_tolerance(kind, n),
    )
    profile.validate(n, shared_memory_exempt=kind is MechanismKind.ATOMIC_CAS)
    return profile


def diff_profiles(derived: MechanismProfile, golden: MechanismProfile) -> list[str]:
    diffs = []
    if derived.consistency != golden.consistency:
        diffs.append(f"consistency: {derived.consistency.value} != {golden.consistency.value}")
    if derived.writing_freedom != golden.writing_freedom:
        diffs.append(f"writing_freedom: {derived.writing_freedom} != {golden.writing_freedom}")
    if dict(derived.latency_rtt) != dict(golden.latency_rtt):
        diffs.append(f"latency: {dict(derived.latency_rtt)} != {dict(golden.latency_rtt)}")
    if dict(derived.loading) != dict(golden.loading):
        diffs.append(f"loading: {dict(derived.loading)} != {dict(golden.loading)}")
    if derived.fault_tolerance != golden.fault_tolerance:
        diffs.append(f"fault_tolerance: {derived.fault_tolerance} != {golden.fault_tolerance}")
    return diffs


def profile_records(kind: MechanismKind, profile: MechanismProfile) -> list[str]:
    """Line-delimited export: mechanism|property|case|value."""
    name = MechanismKind(kind).value
    out = [f"{name}|consistency|-|{profile.consistency.value}",
           f"{name}|writing_freedom|-|{profile.writing_freedom}"]
    for case, v in sorted(profile.latency_rtt.items()):
        out.append(f"{name}|latency|{case}|{v:g}")
    for case, v in sorted(profile.loading.items()):
        out.append(f"{name}|loading|{case}|{v}")
    out.append(f"{name}|fault_tolerance|-|{profile.fault_tolerance}")
    return out


def profile_table(kind: MechanismKind, profile: MechanismProfile, n: int) -> str:
    cells = [
        ("consistency", profile.consistency.value),
        ("writing freedom", str(profile.writing_freedom)),
        ("latency", ", ".join(f"{v:g} ({c})" for c, v in sorted(profile.latency_rtt.items()))),
        ("loading", ", ".join(f"{v} ({c})" for c, v in sorted(profile.loading.items()))),
        ("fault tolerance", str(profile.fault_tolerance)),
    ]
    width = max(len(k) for k, _ in cells)
    head = f"{MechanismKind(kind).value} @ n={n}"
    lines = [head, "-" * len(head)]
    lines += [f"{k.ljust(width)}  {v}" for k, v in cells]
    return "\n".join(lines)


# -- limit formulas --

def lemma1_max_faults(n: int) -> int:
    if n < 1:
        raise AnalyzerError("n must be >= 1")
    return (n - 1) // 2


def dynamic_limit_safe(n: int, q: int, f: int) -> bool:
    _check_nqf(n, q, f)
    return 2 * (n - q) + f - 2 < n


def static_limit_safe(n: int, q: int, f: int) -> bool:
    _check_nqf(n, q, f)
    return (n - q) + f <= math.ceil((n - 1) / 2)


def static_max_faults(n: int, q: int) -> int:
    """Largest reported f for a static arbiter, capped at the minority."""
    raw = math.ceil((n - 1) / 2) - (n - q)
    return min(raw, lemma1_max_faults(n))


def _check_nqf(n: int, q: int, f: int) -> None:
    if not 1 <= q <= n:
        raise AnalyzerError(f"quorum size {q} outside [1, {n}]")
    if not 0 <= f < n:
        raise AnalyzerError(f"fault count {f} outside [0, {n})")


# -- enumeration oracles --

def roll_equivalence(n_max: int) -> Verdict:
    """The dynamic-arbiter bound matches 2F + f - 1 <= n with F = n - q."""
    if n_max < 2:
        raise AnalyzerError("n_max must be >= 2")
    for n in range(2, n_max + 1):
        for q in range(1, n + 1):
            for f in range(0, n):
                ours = dynamic_limit_safe(n, q, f)
                roll = 2 * (n - q) + f - 1 <= n
                if ours != roll:
                    return Verdict(Outcome.FAIL, "roll_equivalence",
                                   f"(n={n}, q={q}, f={f}): {ours} vs {roll}")
    return Verdict(Outcome.PASS, "roll_equivalence")


def max_uncovered(n: int, q: int) -> int:
    """Worst-case writers outside the intersection of two size-q quorums."""
    if 2 * q < n:
        raise NonIntersecting(f"2*{q} < {n}: quorums may not intersect at all")
    if q > n:
        raise AnalyzerError("quorum larger than the writer set")
    universe = frozenset(range(n))
    best = 0
    for q1 in itertools.combinations(universe, q):
        for q2 in itertools.combinations(universe, q):
            uncovered = len(universe - (frozenset(q1) & frozenset(q2)))
            if uncovered > best:
                best = uncovered
    return best


def split_brain_possible(n: int, threshold: int) -> bool:
    """Do two disjoint agreement groups of the given size exist?"""
    if not 1 <= threshold <= n:
        raise AnalyzerError(f"threshold {threshold} outside [1, {n}]")
    return split_brain_witness(n, threshold) is not None


def split_brain_witness(n: int, threshold: int) -> Optional[tuple[frozenset, frozenset]]:
    universe = frozenset(range(n))
    for g1 in itertools.combinations(universe, threshold):
        rest = universe - frozenset(g1)
        if len(rest) >= threshold:
            for g2 in itertools.combinations(sorted(rest), threshold):
                return frozenset(g1), frozenset(g2)
    return None


def static_oracle_safe(n: int, q: int, f: int) -> bool:
    """Enumerate fault placements: enough live writers must hold the fact.

    The quorum is the first q writers (homogeneous writers, so the choice is
    symmetric); the adversary picks any f of the n writers to crash. The
    agreement threshold is floor((n+1)/2); at even n that value alone does
    not forbid two disjoint groups, which is what the separate minority cap
    (see static_max_faults) accounts for.
    """
    _check_nqf(n, q, f)
    quorum = frozenset(range(q))
    need = (n + 1) // 2
    for faults in itertools.combinations(range(n), f):
        if len(quorum - frozenset(faults)) < need:
            return False
    return True


@dataclass(frozen=True)
class LimitReport:
    n: int
    q: int
    f: int
    formula_safe: bool
    oracle_safe: bool
    kind: str = "dynamic"
    witness: Optional[str] = None

    def __post_init__(self) -> None:
        if self.formula_safe != self.oracle_safe and self.witness is None:
            raise AnalyzerError("disagreeing report requires a witness")

    def line(self) -> str:
        return (f"{self.n}|{self.q}|{self.f}|{self.kind}|"
                f"{str(self.formula_safe).lower()}|{str(self.oracle_safe).lower()}|{self.witness or ''}")


@dataclass
class LimitSweep:
    reports: list[LimitReport] = field(default_factory=list)
    check_lines: list[str] = field(default_factory=list)
    disagreements: int = 0

    @property
    def ok(self) -> bool:
        return self.disagreements == 0


def verify_limits(n_max: int) -> LimitSweep:
    """Full sweep: equivalences, counting identities, monotonicity."""
    if not 2 <= n_max <= 12:
        raise AnalyzerError("n_max must lie in [2, 12]")
    sweep = LimitSweep()

    roll = roll_equivalence(n_max)
    sweep.check_lines.append(roll.line())
    if not roll.passed:
        sweep.disagreements += 1

    for n in range(2, n_max + 1):
        for q in range(1, n + 1):
            if 2 * q >= n:
                enumerated = max_uncovered(n, q)
                predicted = min(n, 2 * (n - q))
                ok = enumerated == predicted
                sweep.check_lines.append(
                    f"{'PASS' if ok else 'FAIL'}|max_uncovered|n={n} q={q} "
                    f"enumerated={enumerated} formula={predicted}")
                if not ok:
                    sweep.disagreements += 1
            for f in range(0, n):
                dyn = LimitReport(n, q, f, dynamic_limit_safe(n, q, f),
                                  2 * (n - q) + f - 1 <= n, kind="dynamic",
                                  witness=None)
                sweep.reports.append(dyn)
                st_formula = static_limit_safe(n, q, f)
                st_oracle = static_oracle_safe(n, q, f)
                witness = None
                if st_formula != st_oracle:
                    witness = f"fault placement disagrees at (n={n},q={q},f={f})"
                sweep.reports.append(LimitReport(n, q, f, st_formula, st_oracle,
                                                 kind="static", witness=witness))
        for t in range(1, n + 1):
            enumerated = split_brain_possible(n, t)
            predicted = t <= n // 2
            ok = enumerated == predicted
            wit = split_brain_witness(n, t)
            extra = ""
            if wit:
                extra = " groups=" + ";".join(",".join(map(str, sorted(g))) for g in wit)
            sweep.check_lines.append(
                f"{'PASS' if ok else 'FAIL'}|split_brain_possible|n={n} t={t} "
                f"enumerated={enumerated} formula={predicted}{extra}")
            if not ok:
                sweep.disagreements += 1

    for rep in sweep.reports:
        if rep.formula_safe != rep.oracle_safe:
            sweep.disagreements += 1

    mono = _monotonicity(n_max)
    sweep.check_lines.extend(v.line() for v in mono)
    sweep.disagreements += sum(0 if v.passed else 1 for v in mono)

    caps = _cap_interaction(n_max)
    sweep.check_lines.append(caps.line())
    if not caps.passed:
        sweep.disagreements += 1
    return sweep


def _monotonicity(n_max: int) -> list[Verdict]:
    out = []
    for name, fn in (("dynamic", dynamic_limit_safe), ("static", static_limit_safe)):
        bad = None
        for n in range(2, n_max + 1):
            for f in range(0, n):
                for q in range(1, n):
                    if fn(n, q, f) and not fn(n, q + 1, f):
                        bad = f"growing q flips safe->unsafe at (n={n}, q={q}->{q+1}, f={f})"
            for q in range(1, n + 1):
                for f in range(0, n - 1):
                    if not fn(n, q, f) and fn(n, q, f + 1):
                        bad = f"growing f flips unsafe->safe at (n={n}, q={q}, f={f}->{f+1})"
        out.append(Verdict(Outcome.FAIL, f"monotone_{name}", bad) if bad
                   else Verdict(Outcome.PASS, f"monotone_{name}"))
    return out


def _cap_interaction(n_max: int) -> Verdict:
    for n in range(2, n_max + 1):
        for q in range(1, n + 1):
            if static_max_faults(n, q) > lemma1_max_faults(n):
                return Verdict(Outcome.FAIL, "lemma1_cap",
                               f"reported bound exceeds the minority at (n={n}, q={q})")
    return Verdict(Outcome.PASS, "lemma1_cap")
