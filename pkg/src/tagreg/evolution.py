"""Mutation, parent selection and the generational run loop."""

from __future__ import annotations

import csv
import io
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import problems
from .genome import Instruction, Limits, ModuleDef, Program, random_instruction, random_program
from .problems import CalcTestCase, ProblemConfig
from .tags import DEFAULT_WIDTH, STREAK, Tag
from .vm import VMConfig

TOURNAMENT = "tournament"
LEXICASE = "lexicase"
DOWNSAMPLED = "downsampled_lexicase"
SELECTIONS = (TOURNAMENT, LEXICASE, DOWNSAMPLED)

MUTATION_EVENTS = ("tag_bit", "arg", "inst_sub", "inst_ins", "inst_del", "slip",
                   "module_dup", "module_del")


@dataclass(frozen=True)
class MutationRates:
    inst_sub: float = 0.001
    inst_ins: float = 0.001
    inst_del: float = 0.001
    slip: float = 0.05
    arg: float = 0.001
    tag_bit: float = 0.0001
    module_dup: float = 0.05
    module_del: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"mutation rate {f.name}={v} outside [0, 1]")

    @classmethod
    def zero(cls) -> "MutationRates":
        return cls(**{f.name: 0.0 for f in fields(cls)})


def _positions(rng, n: int, count: int) -> list[int]:
    """``count`` distinct sorted indices drawn uniformly from [0, n)."""
    if count == 0:
        return []
    if count == n:
        return list(range(n))
    if count * 4 <= n:
        # rejection on small samples; cheaper than rng.choice for one or two picks
        picked: set[int] = set()
        while len(picked) < count:
            picked.update(int(x * n) for x in rng.random(count - len(picked)).tolist())
        return sorted(picked)
    return sorted(rng.choice(n, size=count, replace=False).tolist())


def _binomial(u: float, n: int, rate: float, rng) -> int:
    """Binomial(n, rate) draw by inverting the CDF at uniform ``u``.

    Mutation counts are almost always 0 or 1, so this walks a step or two;
    large means fall back to numpy.
    """
    if n == 0 or rate == 0.0:
        return 0
    if rate == 1.0:
        return n
    if n * rate > 20.0:
        return int(rng.binomial(n, rate))
    pmf = (1.0 - rate) ** n
    cdf = pmf
    odds = rate / (1.0 - rate)
    k = 0
    while u > cdf and k < n:
        pmf *= (n - k) / (k + 1) * odds
        k += 1
        cdf += pmf
    return k


def _hits(rng, n: int, rate: float) -> list[int]:
    """Sorted indices in [0, n) that fire, each independently with ``rate``."""
    if n == 0 or rate == 0.0:
        return []
    return _positions(rng, n, int(rng.binomial(n, rate)))


def _locate(bodies: list[list], hits: list[int]) -> list[tuple[int, int]]:
    """Map flat instruction indices to (module, position) pairs."""
    out, base, bi = [], 0, 0
    for h in hits:
        while h >= base + len(bodies[bi]):
            base += len(bodies[bi])
            bi += 1
        out.append((bi, h - base))
    return out


def mutate(p: Program, rates: MutationRates, rng, inst_set: Sequence[str],
           limits: Limits = Limits(), stats: Counter | None = None) -> Program:
    """Return a mutated copy of ``p``, or ``p`` itself when nothing fires.

    Operators run in a fixed order: tag bits, arguments, instruction
    substitution/insertion/deletion, slip, whole-module duplication/deletion.
    Every per-instruction and per-module chance is taken against the
    parent's instructions and modules. Changes that would break ``limits``
    are skipped and counted under ``stats["skipped"]``.
    """
    stats = stats if stats is not None else Counter()
    width = p.width
    n_mod = len(p.modules)
    n_inst = p.size
    # event counts for every operator in one draw; positions come later
    sizes = (width * (n_mod + n_inst), 3 * n_inst, n_inst, n_inst, n_inst, n_mod, n_mod, n_mod)
    probs = (rates.tag_bit, rates.arg, rates.inst_sub, rates.inst_ins, rates.inst_del,
             rates.slip, rates.module_dup, rates.module_del)
    u = rng.random(len(sizes)).tolist()
    counts = [_binomial(x, n, r, rng) for x, n, r in zip(u, sizes, probs)]
    if not any(counts):
        return p
    n_bits, n_args, n_sub, n_ins, n_del, n_slip, n_dup, n_mdel = counts
    mod_tags = [m.tag for m in p.modules]
    # bodies stay shared tuples until first written
    bodies: list = [m.body for m in p.modules]
    dirty: set[int] = set()

    def writable(bi: int) -> list:
        if bi not in dirty:
            bodies[bi] = list(bodies[bi])
            dirty.add(bi)
        return bodies[bi]

    # tag bits: module tags first, then instruction tags in order
    if n_bits:
        stats["tag_bit"] += n_bits
        inst_flips: dict[int, int] = {}
        for pos in _positions(rng, width * (n_mod + n_inst), n_bits):
            i, bit = divmod(pos, width)
            mask = 1 << (width - 1 - bit)
            if i < n_mod:
                mod_tags[i] = Tag(mod_tags[i].bits ^ mask, width)
                writable(i)
            else:
                inst_flips[i - n_mod] = inst_flips.get(i - n_mod, 0) ^ mask
        order = sorted(inst_flips)
        for (bi, j), i in zip(_locate(bodies, order), order):
            b = writable(bi)
            inst = b[j]
            b[j] = Instruction(inst.op, Tag(inst.tag.bits ^ inst_flips[i], width), inst.args)

    # arguments
    if n_args:
        stats["arg"] += n_args
        hits = _positions(rng, 3 * n_inst, n_args)
        values = rng.integers(limits.arg_min, limits.arg_max + 1, size=n_args).tolist()
        for (bi, j), h, v in zip(_locate(bodies, [h // 3 for h in hits]), hits, values):
            b = writable(bi)
            inst = b[j]
            args = list(inst.args)
            args[h % 3] = v
            b[j] = Instruction(inst.op, inst.tag, tuple(args))

    # instruction substitution, then insertion and deletion, back to front so
    # earlier positions stay valid
    if n_sub:
        stats["inst_sub"] += n_sub
        for bi, j in _locate(bodies, _positions(rng, n_inst, n_sub)):
            writable(bi)[j] = random_instruction(rng, inst_set, limits)
    # at a shared position the deletion (1) runs before the insertion (0)
    edits = []
    if n_del:
        stats["inst_del"] += n_del
        edits += [(bi, j, 1) for bi, j in _locate(bodies, _positions(rng, n_inst, n_del))]
    if n_ins:
        stats["inst_ins"] += n_ins
        edits += [(bi, j, 0) for bi, j in _locate(bodies, _positions(rng, n_inst, n_ins))]
    for bi, j, kind in sorted(edits, reverse=True):
        n = len(bodies[bi])
        if kind == 1 and n > 1:
            del writable(bi)[j]
        elif kind == 0 and n < limits.max_module_len:
            writable(bi).insert(j, random_instruction(rng, inst_set, limits))
        else:
            stats["skipped"] += 1

    # slip: duplicate or delete the span between two uniform cut points
    if n_slip:
        stats["slip"] += n_slip
    for bi in _positions(rng, n_mod, n_slip) if n_slip else ():
        b = bodies[bi]
        lo, hi = sorted(rng.integers(0, len(b) + 1, size=2).tolist())
        duplicate = rng.random() < 0.5
        if lo == hi:
            continue
        if duplicate and len(b) + hi - lo <= limits.max_module_len:
            writable(bi)[hi:hi] = b[lo:hi]
        elif not duplicate and len(b) - (hi - lo) >= 1:
            del writable(bi)[lo:hi]
        else:
            stats["skipped"] += 1

    # untouched modules keep their object so their compiled form is reused
    modules = list(p.modules)
    for i in dirty:
        modules[i] = ModuleDef(mod_tags[i], tuple(bodies[i]))

    # whole-module duplication then deletion
    if n_dup:
        stats["module_dup"] += n_dup
    if n_mdel:
        stats["module_del"] += n_mdel
    copies = []
    for i in _positions(rng, n_mod, n_dup) if n_dup else ():
        if n_mod + len(copies) < limits.max_modules:
            copies.append(modules[i])
        else:
            stats["skipped"] += 1
    drop = set()
    for i in _positions(rng, n_mod, n_mdel) if n_mdel else ():
        if n_mod + len(copies) - len(drop) > 1:
            drop.add(i)
        else:
            stats["skipped"] += 1
    if drop:
        modules = [m for i, m in enumerate(modules) if i not in drop]
    return Program(tuple(modules + copies))


# -- selection -----------------------------------------------------------------

def tournament_select(fitnesses: Sequence[float], rng, size: int = 8) -> int:
    """Best of ``size`` members sampled without replacement; ties broken at random."""
    n = len(fitnesses)
    if n == 0:
        raise ValueError("empty population")
    if not 1 <= size <= n:
        raise ValueError(f"tournament size {size} not in [1, {n}]")
    entrants = rng.choice(n, size=size, replace=False)
    scores = np.asarray(fitnesses)[entrants]
    best = entrants[scores == scores.max()]
    return int(best[0] if best.size == 1 else best[rng.integers(best.size)])


def tournament_select_many(fitnesses: Sequence[float], n_parents: int, rng,
                           size: int = 8) -> list[int]:
    """``n_parents`` independent tournaments, drawn in one batch.

    Rows with a repeated entrant are redrawn, which leaves each row a uniform
    sample without replacement.
    """
    fit = np.asarray(fitnesses, dtype=float)
    n = fit.size
    if n == 0:
        raise ValueError("empty population")
    if not 1 <= size <= n:
        raise ValueError(f"tournament size {size} not in [1, {n}]")
    entrants = rng.integers(n, size=(n_parents, size))
    while True:
        srt = np.sort(entrants, axis=1)
        bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
        if bad.size == 0:
            break
        entrants[bad] = rng.integers(n, size=(bad.size, size))
    scores = fit[entrants]
    ties = scores == scores.max(axis=1, keepdims=True)
    keys = np.where(ties, rng.random(entrants.shape), -1.0)
    return entrants[np.arange(n_parents), keys.argmax(axis=1)].tolist()


def lexicase_select(matrix, rng) -> int:
    """Standard lexicase over a (population x cases) score matrix; higher is better."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    if m.shape[0] == 0:
        raise ValueError("empty population")
    pool = np.arange(m.shape[0])
    for c in rng.permutation(m.shape[1]):
        col = m[pool, c]
        pool = pool[col == col.max()]
        if pool.size == 1:
            break
    return int(pool[rng.integers(pool.size)])


def sample_cases(cases: Sequence[CalcTestCase], sample_size: int, rng) -> list[int]:
    """Indices of a down-sample holding at least one case per operator."""
    by_op: dict[str, list[int]] = {}
    for i, c in enumerate(cases):
        by_op.setdefault(c.operator, []).append(i)
    if sample_size < len(by_op):
        raise ValueError(f"sample size {sample_size} < number of operators {len(by_op)}")
    if sample_size > len(cases):
        raise ValueError(f"sample size {sample_size} > number of cases {len(cases)}")
    chosen = [idx[int(rng.integers(len(idx)))] for idx in by_op.values()]
    taken = set(chosen)
    rest = np.array([i for i in range(len(cases)) if i not in taken], dtype=np.int64)
    extra = rng.choice(rest, size=sample_size - len(chosen), replace=False) if rest.size else []
    return sorted(chosen + [int(i) for i in extra])


def downsampled_lexicase_select(matrix, n_parents: int, rng) -> list[int]:
    """Lexicase parents for one generation over an already down-sampled matrix."""
    return [lexicase_select(matrix, rng) for _ in range(n_parents)]


# -- run loop ------------------------------------------------------------------

DEFAULT_SELECTION = {
    problems.REPEATED: TOURNAMENT,
    problems.CHANGING: TOURNAMENT,
    problems.CONTEXTUAL: LEXICASE,
    problems.CALC_PREFIX: DOWNSAMPLED,
    problems.CALC_POSTFIX: DOWNSAMPLED,
}


@dataclass(frozen=True)
class RunConfig:
    problem: str = problems.REPEATED
    k: int = 2
    population: int = 1000
    generations: int = 10000
    selection: str = ""  # empty picks the problem's usual scheme
    tournament_size: int = 8
    seed: int = 0
    regulation_enabled: bool = True
    metric: str = STREAK
    budget: int = 128
    width: int = DEFAULT_WIDTH
    stop_on_solution: bool = True
    workers: int = 1
    sample_size: int = 20
    train_per_op: int = 20
    test_per_op: int = 100
    rates: MutationRates = field(default_factory=MutationRates)
    limits: Limits = field(default_factory=Limits)

    def __post_init__(self):
        if self.problem not in problems.KINDS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {problems.KINDS}")
        if self.selection and self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}; expected one of {SELECTIONS}")
        if self.population < 1:
            raise ValueError("population must be > 0")
        if self.generations < 1:
            raise ValueError("generations must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.limits.width != self.width:
            object.__setattr__(self, "limits", replace(self.limits, width=self.width))
        if self.selection_scheme == TOURNAMENT and not 1 <= self.tournament_size <= self.population:
            raise ValueError("tournament size must be in [1, population]")

    @property
    def selection_scheme(self) -> str:
        return self.selection or DEFAULT_SELECTION[self.problem]


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    solution_found: bool


@dataclass
class RunReport:
    config: RunConfig
    problem: ProblemConfig
    records: list[GenerationRecord]
    first_solution: int | None
    solution: Program | None
    best: Program
    train_cases: list[CalcTestCase] = field(default_factory=list)
    test_cases: list[CalcTestCase] = field(default_factory=list)

    @property
    def solved(self) -> bool:
        return self.first_solution is not None

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("generation", "best_fitness", "mean_fitness", "solution_found"))
        for r in self.records:
            w.writerow((r.generation, f"{r.best_fitness:.6f}", f"{r.mean_fitness:.6f}",
                        int(r.solution_found)))
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def _score_one(program: Program, problem: ProblemConfig, task) -> list[float]:
    """Per-case scores for one program under this generation's task."""
    kind = problem.kind
    if kind == problems.REPEATED:
        return [problems.eval_repeated(program, problem).fitness]
    if kind == problems.CHANGING:
        return [problems.eval_changing(program, task, problem).fitness]
    if kind == problems.CONTEXTUAL:
        return [float(x) for x in problems.eval_contextual_all(program, problem)]
    return [problems.eval_calculator(program, c, problem).fitness for c in task]


def _score_chunk(args) -> list[list[float]]:
    programs, problem, task = args
    return [_score_one(p, problem, task) for p in programs]


def _chunks(seq: list, n: int) -> list[list]:
    size = -(-len(seq) // n)
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def _passes_all(program: Program, problem: ProblemConfig, cases: Sequence[CalcTestCase]) -> bool:
    return all(problems.eval_calculator(program, c, problem).passed for c in cases)


class Evolver:
    """Holds the state of one run; ``run_evolution`` drives it."""

    def __init__(self, cfg: RunConfig, pool: ProcessPoolExecutor | None = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        vm_cfg = VMConfig(metric=cfg.metric, regulation_enabled=cfg.regulation_enabled)
        self.problem = problems.make_problem(cfg.problem, self.rng, k=cfg.k, width=cfg.width,
                                             budget=cfg.budget, vm_config=vm_cfg)
        self.train: list[CalcTestCase] = []
        self.test: list[CalcTestCase] = []
        if cfg.problem in problems.CALCULATOR_KINDS:
            self.train, self.test = problems.gen_calc_cases(self.rng, cfg.train_per_op,
                                                            cfg.test_per_op)
        self.inst_set = self.problem.instruction_set
        self.population = [random_program(self.rng, cfg.limits, self.inst_set)
                           for _ in range(cfg.population)]
        self.pool = pool

    def _task(self):
        kind = self.cfg.problem
        if kind == problems.CHANGING:
            # one ordering per generation, shared by the whole population
            return [int(x) for x in self.rng.permutation(problems.CHANGING_SIGNALS)]
        if kind in problems.CALCULATOR_KINDS:
            idx = sample_cases(self.train, self.cfg.sample_size, self.rng)
            return [self.train[i] for i in idx]
        return None

    def score(self, task) -> np.ndarray:
        if self.pool is None or self.cfg.workers == 1:
            rows = [_score_one(p, self.problem, task) for p in self.population]
        else:
            jobs = [(c, self.problem, task) for c in _chunks(self.population, self.cfg.workers * 4)]
            rows = [r for chunk in self.pool.map(_score_chunk, jobs) for r in chunk]
        return np.array(rows, dtype=float)

    def _is_solution(self, i: int, row: np.ndarray) -> bool:
        kind = self.cfg.problem
        if kind == problems.REPEATED:
            return row[0] == self.cfg.k
        if kind == problems.CHANGING:
            return row[0] == problems.CHANGING_SIGNALS
        if kind == problems.CONTEXTUAL:
            return bool(row.all())
        if not row.all():
            return False
        p = self.population[i]
        return _passes_all(p, self.problem, self.train) and _passes_all(p, self.problem, self.test)

    def select(self, scores: np.ndarray) -> list[int]:
        n = self.cfg.population
        if self.cfg.selection_scheme == TOURNAMENT:
            fit = scores.sum(axis=1)
            return tournament_select_many(fit, n, self.rng, self.cfg.tournament_size)
        return downsampled_lexicase_select(scores, n, self.rng)

    def step(self, generation: int):
        """Score the population; returns (record, scores or None to stop, solution)."""
        scores = self.score(self._task())
        fit = scores.sum(axis=1)
        solution = None
        for i in np.flatnonzero(fit == fit.max()).tolist():
            if self._is_solution(i, scores[i]):
                solution = self.population[i]
                break
        self.best = self.population[int(np.argmax(fit))]
        record = GenerationRecord(generation, float(fit.max()), float(fit.mean()),
                                  solution is not None)
        return record, scores if solution is None or not self.cfg.stop_on_solution else None, solution

    def reproduce(self, scores: np.ndarray) -> None:
        parents = self.select(scores)
        cfg = self.cfg
        self.population = [mutate(self.population[i], cfg.rates, self.rng, self.inst_set, cfg.limits)
                           for i in parents]


def run_evolution(cfg: RunConfig, progress=None) -> RunReport:
    """Evaluate, select, mutate, replace; stop at the limit or (optionally) first solution.

    Results depend only on ``cfg`` and never on ``cfg.workers``.
    """
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        ev = Evolver(cfg, pool)
        records: list[GenerationRecord] = []
        first, solution = None, None
        for gen in range(cfg.generations):
            record, scores, found = ev.step(gen)
            records.append(record)
            if progress is not None:
                progress(record)
            if found is not None and first is None:
                first, solution = gen, found
            if scores is None:
                break
            if gen + 1 < cfg.generations:
                ev.reproduce(scores)
        return RunReport(cfg, ev.problem, records, first, solution, ev.best, ev.train, ev.test)
    finally:
        if pool is not None:
            pool.shutdown()
