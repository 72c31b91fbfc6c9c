"""Knockouts, strategy classification, regulatory networks and execution profiles."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import problems
from .genome import (
    CATEGORIES, FLOW_CONTROL, REGULATION_DOWN, REGULATION_OPS, REGULATION_UP, Instruction,
    ModuleDef, OPNAME, Program, category_of,
)
from .problems import CalcTestCase, ProblemConfig
from .vm import TRACE_FIELDS, TraceEvent
from .vm.common import INSTRUCTION_EXECUTED, REGULATION_CHANGED

GLOBAL_MEMORY_OPS = ("GlobalToWorking", "WorkingToGlobal")

KNOCKOUTS = {
    "regulation_all": frozenset(REGULATION_OPS),
    "regulation_up": frozenset(REGULATION_UP),
    "regulation_down": frozenset(REGULATION_DOWN),
    "global_memory": frozenset(GLOBAL_MEMORY_OPS),
    "regulation_and_memory": frozenset(REGULATION_OPS + GLOBAL_MEMORY_OPS),
}

REGULATION_RELIANT = "regulation_reliant"
MEMORY_RELIANT = "memory_reliant"
BOTH = "both"
NEITHER = "neither"
EITHER = "either"

PROMOTE = "promote"
REPRESS = "repress"


class NotASolution(ValueError):
    """Raised when a strategy is requested for a program that does not solve the problem."""


def knockout(p: Program, target: str) -> Program:
    """Copy of ``p`` with every targeted instruction turned into a Nop.

    Tags and arguments stay, so sizes and tag matching are unchanged.
    """
    if target not in KNOCKOUTS:
        raise ValueError(f"unknown knockout target {target!r}; expected one of {sorted(KNOCKOUTS)}")
    ops = KNOCKOUTS[target]
    return Program(tuple(
        ModuleDef(m.tag, tuple(Instruction("Nop", i.tag, i.args) if i.op in ops else i
                               for i in m.body))
        for m in p.modules
    ))


# -- fitness on a problem -----------------------------------------------------

def sample_permutations(n: int, seed: int = 0) -> list[list[int]]:
    rng = np.random.default_rng(seed)
    return [[int(x) for x in rng.permutation(problems.CHANGING_SIGNALS)] for _ in range(n)]


def problem_score(p: Program, cfg: ProblemConfig, cases: Sequence[CalcTestCase] | None = None,
                  permutations: Sequence[Sequence[int]] | None = None) -> tuple[float, float]:
    """(score, maximum score) of ``p`` on the whole problem.

    Changing-signal scores sum over ``permutations`` (default: 100 seeded
    orderings); calculator scores need ``cases``.
    """
    kind = cfg.kind
    if kind == problems.REPEATED:
        return problems.eval_repeated(p, cfg).fitness, cfg.k
    if kind == problems.CONTEXTUAL:
        return sum(problems.eval_contextual_all(p, cfg)), len(problems.CONTEXT_CASES)
    if kind == problems.CHANGING:
        perms = permutations if permutations is not None else sample_permutations(100)
        total = sum(problems.eval_changing(p, perm, cfg).fitness for perm in perms)
        return total, problems.CHANGING_SIGNALS * len(perms)
    if not cases:
        raise ValueError("calculator scoring needs test cases")
    return sum(problems.eval_calculator(p, c, cfg).fitness for c in cases), len(cases)


@dataclass(frozen=True)
class KnockoutReport:
    original: float
    maximum: float
    fitness: dict[str, float]

    def reduced(self, target: str) -> bool:
        return self.fitness[target] < self.original


def knockout_report(p: Program, cfg: ProblemConfig, targets: Iterable[str] = tuple(KNOCKOUTS),
                    **score_kw) -> KnockoutReport:
    score, top = problem_score(p, cfg, **score_kw)
    return KnockoutReport(score, top, {t: problem_score(knockout(p, t), cfg, **score_kw)[0]
                                       for t in targets})


def strategy_from(report: KnockoutReport) -> str:
    reg = report.reduced("regulation_all")
    mem = report.reduced("global_memory")
    if reg and mem:
        return BOTH
    if reg:
        return REGULATION_RELIANT
    if mem:
        return MEMORY_RELIANT
    return EITHER if report.reduced("regulation_and_memory") else NEITHER


def classify_strategy(p: Program, cfg: ProblemConfig, **score_kw) -> str:
    """Which knockouts break a solution: regulation, memory, both, either or neither."""
    report = knockout_report(p, cfg, ("regulation_all", "global_memory", "regulation_and_memory"),
                             **score_kw)
    if report.original < report.maximum:
        raise NotASolution(f"program scores {report.original} of {report.maximum}")
    return strategy_from(report)


def regulation_direction(p: Program, cfg: ProblemConfig, **score_kw) -> dict[str, bool]:
    """Whether knocking out up- or down-regulation alone reduces fitness."""
    report = knockout_report(p, cfg, ("regulation_up", "regulation_down"), **score_kw)
    return {"up": report.reduced("regulation_up"), "down": report.reduced("regulation_down")}


# -- traces ----------------------------------------------------------------------

def collect_trace(p: Program, cfg: ProblemConfig, permutation: Sequence[int] | None = None,
                  cases: Sequence | None = None) -> list[TraceEvent]:
    """Trace of a full evaluation.

    Contextual and calculator traces concatenate one evaluation per case.
    """
    kind = cfg.kind
    if kind == problems.REPEATED:
        return problems.eval_repeated(p, cfg, trace=True).trace
    if kind == problems.CHANGING:
        perm = list(permutation) if permutation is not None else list(range(problems.CHANGING_SIGNALS))
        return problems.eval_changing(p, perm, cfg, trace=True).trace
    out: list[TraceEvent] = []
    if kind == problems.CONTEXTUAL:
        for case in cases or problems.CONTEXT_CASES:
            out.extend(problems.eval_contextual(p, case, cfg, trace=True).trace)
        return out
    if not cases:
        raise ValueError("calculator traces need test cases")
    for c in cases:
        out.extend(problems.eval_calculator(p, c, cfg, trace=True).trace)
    return out


def write_trace_csv(trace: Sequence[TraceEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for e in trace:
            w.writerow(e)


# -- regulatory networks ---------------------------------------------------------

@dataclass(frozen=True, order=True)
class Edge:
    src: int
    dst: int
    sign: str
    weight: int


@dataclass(frozen=True)
class RegulatoryNetwork:
    vertices: tuple[int, ...]
    edges: tuple[Edge, ...]

    def to_dot(self, name: str = "regulation") -> str:
        lines = [f"digraph {name} {{"]
        lines += [f"  m{v};" for v in self.vertices]
        for e in self.edges:
            lines.append(f'  m{e.src} -> m{e.dst} [sign={e.sign}, weight={e.weight}, '
                         f'label="{e.sign} x{e.weight}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "vertices": list(self.vertices),
            "edges": [{"src": e.src, "dst": e.dst, "sign": e.sign, "weight": e.weight}
                      for e in self.edges],
        }, indent=2) + "\n"


def extract_network(trace: Iterable[TraceEvent]) -> RegulatoryNetwork:
    """Signed regulation edges from actor module to target module.

    Vertices are modules that executed or were regulated. Events that leave
    a modifier unchanged add no edge.
    """
    vertices: set[int] = set()
    weights: Counter = Counter()
    for e in trace:
        if e.kind == INSTRUCTION_EXECUTED:
            vertices.add(e.module)
        elif e.kind == REGULATION_CHANGED:
            vertices.add(e.target)
            if e.new != e.old:
                weights[(e.module, e.target, PROMOTE if e.new > e.old else REPRESS)] += 1
    edges = tuple(sorted(Edge(s, d, sign, w) for (s, d, sign), w in weights.items()))
    vertices.update(e.src for e in edges)
    return RegulatoryNetwork(tuple(sorted(vertices)), edges)


@dataclass(frozen=True)
class NetworkStats:
    promote: int
    repress: int
    self_loops: int


def network_stats(net: RegulatoryNetwork) -> NetworkStats:
    return NetworkStats(
        promote=sum(e.sign == PROMOTE for e in net.edges),
        repress=sum(e.sign == REPRESS for e in net.edges),
        self_loops=sum(e.src == e.dst for e in net.edges),
    )


# -- instruction profiles --------------------------------------------------------

@dataclass(frozen=True)
class InstructionProfile:
    counts: dict[str, int]
    total: int

    @property
    def proportions(self) -> dict[str, float]:
        return {c: n / self.total for c, n in self.counts.items()}

    @property
    def flow_control_fraction(self) -> float:
        return self.counts[FLOW_CONTROL] / self.total

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("category", "count", "proportion"))
            for c, n in self.counts.items():
                w.writerow((c, n, f"{n / self.total:.6f}"))


def instruction_profile(trace: Iterable[TraceEvent]) -> InstructionProfile:
    """Executed-instruction counts per category."""
    counts = Counter(category_of(OPNAME[e.opcode]) for e in trace if e.kind == INSTRUCTION_EXECUTED)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("trace contains no executed instructions")
    return InstructionProfile({c: counts.get(c, 0) for c in CATEGORIES}, total)
