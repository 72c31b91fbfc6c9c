"""Benchmark environments: repeated, contextual, calculator and changing signals."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

from . import vm
from .genome import instruction_set
from .tags import DEFAULT_WIDTH, Tag

REPEATED = "repeated"
CONTEXTUAL = "contextual"
CALC_PREFIX = "calculator_prefix"
CALC_POSTFIX = "calculator_postfix"
CHANGING = "changing"
KINDS = (REPEATED, CONTEXTUAL, CALC_PREFIX, CALC_POSTFIX, CHANGING)
CALCULATOR_KINDS = (CALC_PREFIX, CALC_POSTFIX)

CHANGING_SIGNALS = 16
CONTEXT_SIGNALS = 4
RESPONSE_LETTERS = "ABCD"

# Calculator operators: name -> arity. NAND is two-input here.
CALC_OPS = {
    "ECHO": 1, "NOT": 1, "NAND": 2, "AND": 2, "OR-NOT": 2,
    "OR": 2, "AND-NOT": 2, "NOR": 2, "XOR": 2, "EQUALS": 2,
}
CALC_OP_NAMES = tuple(CALC_OPS)
CALC_WIDTH = 32
CALC_MASK = (1 << CALC_WIDTH) - 1

# (first signal, second signal) -> response letter
CONTEXT_TABLE = (
    (0, 0, "A"), (0, 1, "B"), (0, 2, "C"), (0, 3, "D"),
    (1, 0, "B"), (1, 1, "C"), (1, 2, "D"), (1, 3, "A"),
    (2, 0, "C"), (2, 1, "D"), (2, 2, "A"), (2, 3, "B"),
    (3, 0, "D"), (3, 1, "A"), (3, 2, "B"), (3, 3, "C"),
)
_CONTEXT = {(i, j): RESPONSE_LETTERS.index(r) for i, j, r in CONTEXT_TABLE}

for (_i, _j), _r in _CONTEXT.items():
    if _r != (_i + _j) % 4:
        raise AssertionError(f"contextual table row ({_i}, {_j}) disagrees with (i + j) mod 4")


def n_signals(kind: str) -> int:
    return {REPEATED: 1, CONTEXTUAL: CONTEXT_SIGNALS, CHANGING: CHANGING_SIGNALS}.get(
        kind, len(CALC_OPS) + 1)


@dataclass(frozen=True)
class ProblemConfig:
    kind: str
    signal_tags: tuple[Tag, ...]
    k: int = 2
    budget: int = 128
    vm: vm.VMConfig = field(default_factory=vm.VMConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.kind == REPEATED and not 1 <= self.k <= 16:
            raise ValueError("repeated-signal K must be in [1, 16]")
        if len(self.signal_tags) != n_signals(self.kind):
            raise ValueError(f"{self.kind} needs {n_signals(self.kind)} signal tags, "
                             f"got {len(self.signal_tags)}")
        if len(set(self.signal_tags)) != len(self.signal_tags):
            raise ValueError("signal tags must be distinct")

    @property
    def n_responses(self) -> int:
        return {REPEATED: self.k, CONTEXTUAL: 4, CHANGING: CHANGING_SIGNALS}.get(self.kind, 0)

    @property
    def instruction_set(self) -> tuple[str, ...]:
        return instruction_set(self.n_responses, submit=self.kind in CALCULATOR_KINDS)

    @property
    def numeric_tag(self) -> Tag:
        return self.signal_tags[len(CALC_OPS)]

    def with_vm(self, **changes) -> "ProblemConfig":
        return replace(self, vm=replace(self.vm, **changes))


def random_signal_tags(rng, n: int, width: int = DEFAULT_WIDTH) -> tuple[Tag, ...]:
    tags: list[Tag] = []
    while len(tags) < n:
        t = Tag.random(rng, width)
        if t not in tags:
            tags.append(t)
    return tuple(tags)


def make_problem(kind: str, rng, k: int = 2, width: int = DEFAULT_WIDTH,
                 budget: int = 128, vm_config: vm.VMConfig | None = None) -> ProblemConfig:
    """Problem config with freshly drawn signal tags."""
    return ProblemConfig(kind, random_signal_tags(rng, n_signals(kind), width), k=k,
                         budget=budget, vm=vm_config or vm.VMConfig())


@dataclass
class EvalResult:
    fitness: float
    passed: bool
    trace: list = field(default_factory=list)
    # per delivered signal: response id / output value, or None
    responses: list = field(default_factory=list)


def _hardware(program, cfg: ProblemConfig, trace: bool, backend=None):
    return (backend or vm.Hardware)(program, cfg.vm, trace)


def _first_after(events: list, before: int):
    return events[before][1] if len(events) > before else None


def eval_sequence(program, cfg: ProblemConfig, signal_ids: Sequence[int],
                  expected: Sequence[int], trace: bool = False, backend=None) -> EvalResult:
    """Deliver signals in order; fitness is the count of consecutive correct responses."""
    hw = _hardware(program, cfg, trace, backend)
    record = []
    fitness = 0
    for sid, want in zip(signal_ids, expected):
        hw.thread_reset()
        before = len(hw.responses)
        hw.dispatch_signal(cfg.signal_tags[sid])
        hw.run_until(cfg.budget)
        got = _first_after(hw.responses, before)
        record.append(got)
        if got != want:
            break
        fitness += 1
    return EvalResult(fitness, fitness == len(expected), hw.trace, record)


def eval_repeated(program, cfg: ProblemConfig, trace: bool = False, backend=None) -> EvalResult:
    if cfg.kind != REPEATED:
        raise ValueError(f"expected a repeated-signal config, got {cfg.kind}")
    return eval_sequence(program, cfg, [0] * cfg.k, list(range(cfg.k)), trace, backend)


def check_permutation(perm: Sequence[int], n: int = CHANGING_SIGNALS) -> list[int]:
    perm = [int(x) for x in perm]
    if sorted(perm) != list(range(n)):
        raise ValueError(f"not a permutation of 0..{n - 1}: {perm}")
    return perm


def eval_changing(program, permutation: Sequence[int], cfg: ProblemConfig,
                  trace: bool = False, backend=None) -> EvalResult:
    if cfg.kind != CHANGING:
        raise ValueError(f"expected a changing-signal config, got {cfg.kind}")
    perm = check_permutation(permutation)
    return eval_sequence(program, cfg, perm, perm, trace, backend)


def contextual_expected(i: int, j: int) -> int:
    """Response index (0 = A .. 3 = D) for first signal ``i`` then ``j``."""
    if not (0 <= i < 4 and 0 <= j < 4):
        raise ValueError(f"signal ids must be in [0, 3], got ({i}, {j})")
    return _CONTEXT[(i, j)]


CONTEXT_CASES = tuple((i, j) for i, j, _ in CONTEXT_TABLE)


def eval_contextual(program, test: tuple[int, int], cfg: ProblemConfig,
                    trace: bool = False, backend=None) -> EvalResult:
    if cfg.kind != CONTEXTUAL:
        raise ValueError(f"expected a contextual-signal config, got {cfg.kind}")
    i, j = test
    want = contextual_expected(i, j)
    hw = _hardware(program, cfg, trace, backend)
    hw.dispatch_signal(cfg.signal_tags[i])
    hw.run_until(cfg.budget)
    first = _first_after(hw.responses, 0)
    hw.thread_reset()
    before = len(hw.responses)
    hw.dispatch_signal(cfg.signal_tags[j])
    hw.run_until(cfg.budget)
    got = _first_after(hw.responses, before)
    ok = got == want
    return EvalResult(float(ok), ok, hw.trace, [first, got])


def eval_contextual_all(program, cfg: ProblemConfig, backend=None) -> list[bool]:
    return [eval_contextual(program, case, cfg, backend=backend).passed for case in CONTEXT_CASES]


# -- calculator --------------------------------------------------------------

def calc_truth(op: str, operands: Sequence[int]) -> int:
    """Bitwise result over 32-bit unsigned integers."""
    if op not in CALC_OPS:
        raise ValueError(f"unknown calculator operator {op!r}")
    if len(operands) != CALC_OPS[op]:
        raise ValueError(f"{op} takes {CALC_OPS[op]} operand(s), got {len(operands)}")
    a = operands[0] & CALC_MASK
    b = operands[1] & CALC_MASK if len(operands) > 1 else 0
    result = {
        "ECHO": a,
        "NOT": ~a,
        "NAND": ~(a & b),
        "AND": a & b,
        "OR-NOT": a | ~b,
        "OR": a | b,
        "AND-NOT": a & ~b,
        "NOR": ~(a | b),
        "XOR": a ^ b,
        "EQUALS": ~(a ^ b),
    }[op]
    return result & CALC_MASK


@dataclass(frozen=True)
class CalcTestCase:
    operator: str
    operands: tuple[int, ...]
    expected: int

    def __post_init__(self):
        if self.expected != calc_truth(self.operator, self.operands):
            raise ValueError(f"expected value wrong for {self}")

    @classmethod
    def make(cls, op: str, *operands: int) -> "CalcTestCase":
        return cls(op, tuple(operands), calc_truth(op, operands))


def _edge_operands(arity: int, rng) -> list[tuple[int, ...]]:
    ones = CALC_MASK
    if arity == 1:
        return [(0,), (ones,)]
    a = int(rng.integers(0, CALC_MASK + 1))
    return [(0, 0), (ones, ones), (0, ones), (ones, 0), (a, a)]


def gen_calc_cases(rng, train_per_op: int = 20, test_per_op: int = 100
                   ) -> tuple[list[CalcTestCase], list[CalcTestCase]]:
    """Disjoint training and testing sets; edge cases are forced into training."""
    if train_per_op <= 0 or test_per_op <= 0:
        raise ValueError("case counts must be positive")
    train: list[CalcTestCase] = []
    test: list[CalcTestCase] = []
    seen: set[tuple] = set()
    for op, arity in CALC_OPS.items():
        for count, out, forced in ((train_per_op, train, True), (test_per_op, test, False)):
            pool = _edge_operands(arity, rng) if forced else []
            made = 0
            while made < count:
                if pool:
                    operands = pool.pop(0)
                else:
                    operands = tuple(int(x) for x in rng.integers(0, CALC_MASK + 1, size=arity))
                key = (op, operands)
                if key in seen:
                    continue
                seen.add(key)
                out.append(CalcTestCase.make(op, *operands))
                made += 1
    return train, test


def calc_signals(case: CalcTestCase, cfg: ProblemConfig) -> list[tuple[Tag, tuple]]:
    op_signal = (cfg.signal_tags[CALC_OP_NAMES.index(case.operator)], ())
    operand_signals = [(cfg.numeric_tag, (float(v),)) for v in case.operands]
    if cfg.kind == CALC_PREFIX:
        return [op_signal] + operand_signals
    if cfg.kind == CALC_POSTFIX:
        return operand_signals + [op_signal]
    raise ValueError(f"expected a calculator config, got {cfg.kind}")


def eval_calculator(program, case: CalcTestCase, cfg: ProblemConfig,
                    trace: bool = False, backend=None) -> EvalResult:
    """Pass iff the first output after the final signal equals the expected value.

    Any output before the final signal fails the case.
    """
    signals = calc_signals(case, cfg)
    hw = _hardware(program, cfg, trace, backend)
    record = []
    ok = False
    for idx, (tag, data) in enumerate(signals):
        hw.thread_reset()
        before = len(hw.outputs)
        hw.dispatch_signal(tag, data)
        hw.run_until(cfg.budget)
        got = _first_after(hw.outputs, before)
        record.append(got)
        if idx < len(signals) - 1:
            if got is not None:
                break
        else:
            ok = got is not None and got == float(case.expected)
    return EvalResult(float(ok), ok, hw.trace, record)


# -- generalization ------------------------------------------------------------

class Generalization(NamedTuple):
    generalized: bool
    failure: list[int] | None
    tested: int

    def __bool__(self) -> bool:
        return self.generalized


def generalization_test(program, cfg: ProblemConfig, n_samples: int = 5000, rng=None,
                        backend=None) -> Generalization:
    """Check the program on uniformly sampled signal orderings; stops at the first failure."""
    import numpy as np

    if cfg.kind != CHANGING:
        raise ValueError("generalization is defined for the changing-signal problem")
    rng = rng if rng is not None else np.random.default_rng(0)
    for n in range(1, n_samples + 1):
        perm = [int(x) for x in rng.permutation(CHANGING_SIGNALS)]
        if not eval_changing(program, perm, cfg, backend=backend).passed:
            return Generalization(False, perm, n)
    return Generalization(True, None, n_samples)


# -- files ---------------------------------------------------------------------

CASE_FIELDS = ("case_id", "operator", "operand_count", "operand0", "operand1", "expected", "notation")


def write_cases_csv(path, cases: Sequence[CalcTestCase], notation: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CASE_FIELDS)
        for i, c in enumerate(cases):
            ops = list(c.operands) + [""] * (2 - len(c.operands))
            w.writerow([i, c.operator, len(c.operands), ops[0], ops[1], c.expected, notation])


def read_cases_csv(path) -> list[CalcTestCase]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            n = int(row["operand_count"])
            operands = tuple(int(row[f"operand{i}"]) for i in range(n))
            case = CalcTestCase(row["operator"], operands, int(row["expected"]))
            out.append(case)
    return out


def signal_names(kind: str) -> list[str]:
    if kind == REPEATED:
        return ["S"]
    if kind == CONTEXTUAL:
        return [f"S-{i}" for i in range(CONTEXT_SIGNALS)]
    if kind == CHANGING:
        return [f"S-{i}" for i in range(CHANGING_SIGNALS)]
    return list(CALC_OP_NAMES) + ["NUMBER"]


def write_tags_csv(path, cfg: ProblemConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("signal_id", "name", "tag"))
        for i, (name, tag) in enumerate(zip(signal_names(cfg.kind), cfg.signal_tags)):
            w.writerow((i, name, tag.to_string()))


def read_tags_csv(path) -> tuple[Tag, ...]:
    with open(path, newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["signal_id"]))
    return tuple(Tag.from_string(r["tag"]) for r in rows)
