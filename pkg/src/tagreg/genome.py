"""Program representation: tagged modules of tagged three-argument instructions."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

from .tags import DEFAULT_WIDTH, Tag

# Categories
ARITHMETIC = "arithmetic"
COMPARISON = "comparison"
FLOW_CONTROL = "flow_control"
MEMORY = "memory"
GLOBAL_MEMORY = "global_memory"
MODULE_CONTROL = "module_control"
REGULATION = "regulation"
RESPONSE = "response"
PROBLEM_IO = "problem_io"
NOP = "nop"

CATEGORIES = (
    ARITHMETIC, COMPARISON, FLOW_CONTROL, MEMORY, GLOBAL_MEMORY,
    MODULE_CONTROL, REGULATION, RESPONSE, PROBLEM_IO, NOP,
)

MAX_RESPONSES = 16

REGULATION_UP = (
    "SetRegulator+", "SetOwnRegulator+", "AdjRegulator+",
    "AdjOwnRegulator+", "IncRegulator", "IncOwnRegulator",
)
REGULATION_DOWN = (
    "SetRegulator-", "SetOwnRegulator-", "AdjRegulator-",
    "AdjOwnRegulator-", "DecRegulator", "DecOwnRegulator",
)
REGULATION_OTHER = ("ClearRegulator", "ClearOwnRegulator", "SenseRegulator", "SenseOwnRegulator")
REGULATION_OPS = REGULATION_UP + REGULATION_DOWN + REGULATION_OTHER


class InstructionSpec(NamedTuple):
    name: str
    code: int
    category: str
    uses_tag: bool = False
    opens_block: bool = False
    closes_block: bool = False


def _build_specs() -> tuple[InstructionSpec, ...]:
    rows: list[tuple] = [("Nop", NOP)]
    rows += [(n, ARITHMETIC) for n in
             ("Add", "Sub", "Mult", "Div", "Mod", "Inc", "Dec", "Nand", "Not", "TerminalVal")]
    rows += [(n, COMPARISON) for n in ("TestEqu", "TestNEqu", "TestLess", "TestLessEqu")]
    rows += [("If", FLOW_CONTROL, False, True), ("While", FLOW_CONTROL, False, True),
             ("Countdown", FLOW_CONTROL, False, True), ("Break", FLOW_CONTROL),
             ("Close", FLOW_CONTROL, False, False, True)]
    rows += [(n, MEMORY) for n in ("CopyMem", "SwapMem", "SetMem")]
    rows += [(n, GLOBAL_MEMORY) for n in ("GlobalToWorking", "WorkingToGlobal")]
    rows += [("Call", MODULE_CONTROL, True), ("Return", MODULE_CONTROL),
             ("Terminate", MODULE_CONTROL), ("Fork", MODULE_CONTROL, True)]
    own = {"SetOwnRegulator+", "SetOwnRegulator-", "AdjOwnRegulator+", "AdjOwnRegulator-",
           "ClearOwnRegulator", "SenseOwnRegulator", "IncOwnRegulator", "DecOwnRegulator"}
    # Table order
    for n in ("SetRegulator+", "SetRegulator-", "SetOwnRegulator+", "SetOwnRegulator-",
              "AdjRegulator+", "AdjRegulator-", "AdjOwnRegulator+", "AdjOwnRegulator-",
              "ClearRegulator", "ClearOwnRegulator", "SenseRegulator", "SenseOwnRegulator",
              "IncRegulator", "IncOwnRegulator", "DecRegulator", "DecOwnRegulator"):
        rows.append((n, REGULATION, n not in own))
    rows += [(f"Response-{k}", RESPONSE) for k in range(MAX_RESPONSES)]
    rows.append(("SubmitResult", PROBLEM_IO))
    return tuple(InstructionSpec(r[0], i, *r[1:]) for i, r in enumerate(rows))


INSTRUCTION_SPECS = _build_specs()
SPECS_BY_NAME = {s.name: s for s in INSTRUCTION_SPECS}
OPCODE = {s.name: s.code for s in INSTRUCTION_SPECS}
_OPENERS = frozenset(s.code for s in INSTRUCTION_SPECS if s.opens_block)
_CLOSERS = frozenset(s.code for s in INSTRUCTION_SPECS if s.closes_block)
OPNAME = tuple(s.name for s in INSTRUCTION_SPECS)
RESPONSE_BASE = OPCODE["Response-0"]


def response_op(k: int) -> str:
    return f"Response-{k}"


def category_of(op: str) -> str:
    return SPECS_BY_NAME[op].category


def ops_in(*categories: str) -> tuple[str, ...]:
    return tuple(s.name for s in INSTRUCTION_SPECS if s.category in categories)


BASE_INSTRUCTIONS = ops_in(ARITHMETIC, COMPARISON, FLOW_CONTROL, MEMORY, GLOBAL_MEMORY,
                           MODULE_CONTROL, REGULATION, NOP)


def instruction_set(n_responses: int = 0, submit: bool = False) -> tuple[str, ...]:
    """Base instruction set plus problem-specific output instructions."""
    if not 0 <= n_responses <= MAX_RESPONSES:
        raise ValueError(f"n_responses must be in [0, {MAX_RESPONSES}]")
    ops = BASE_INSTRUCTIONS + tuple(response_op(k) for k in range(n_responses))
    return ops + ("SubmitResult",) if submit else ops


@dataclass(frozen=True)
class Limits:
    max_modules: int = 256
    max_module_len: int = 128
    arg_min: int = -4
    arg_max: int = 4
    width: int = DEFAULT_WIDTH
    init_modules: tuple[int, int] = (1, 8)
    init_module_len: tuple[int, int] = (1, 32)

    def __post_init__(self):
        lo, hi = self.init_modules
        if not 1 <= lo <= hi <= self.max_modules:
            raise ValueError(f"bad init_modules range {self.init_modules}")
        lo, hi = self.init_module_len
        if not 1 <= lo <= hi <= self.max_module_len:
            raise ValueError(f"bad init_module_len range {self.init_module_len}")


@dataclass(frozen=True)
class Instruction:
    op: str
    tag: Tag
    args: tuple[int, int, int] = (0, 0, 0)
    code: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in OPCODE:
            raise ValueError(f"unknown opcode {self.op!r}")
        object.__setattr__(self, "code", OPCODE[self.op])


@dataclass(frozen=True)
class ModuleDef:
    tag: Tag
    body: tuple[Instruction, ...]

    @cached_property
    def flat(self) -> tuple[tuple, tuple, tuple, tuple]:
        """(opcodes, args, tag values, local index of each opener's Close or len)."""
        body = self.body
        n = len(body)
        ops = tuple([i.code for i in body])
        close = [n] * n
        if not _OPENERS.isdisjoint(ops):
            stack = []
            for i, c in enumerate(ops):
                if c in _OPENERS:
                    stack.append(i)
                elif c in _CLOSERS and stack:
                    close[stack.pop()] = i
        return (ops, tuple([i.args for i in body]), tuple([i.tag.bits for i in body]),
                tuple(close))

    def __getstate__(self):
        return {"tag": self.tag, "body": self.body}

    def __setstate__(self, state):
        object.__setattr__(self, "tag", state["tag"])
        object.__setattr__(self, "body", state["body"])


class CompiledProgram(NamedTuple):
    """Flat view of a program consumed by both VM backends."""

    width: int
    module_tags: tuple[int, ...]
    module_start: tuple[int, ...]
    module_len: tuple[int, ...]
    ops: tuple[int, ...]
    args: tuple[tuple[int, int, int], ...]
    inst_tags: tuple[int, ...]
    # index (global) of the Close matching each opener, or module end
    match_close: tuple[int, ...]


@dataclass(frozen=True)
class Program:
    modules: tuple[ModuleDef, ...]

    @property
    def width(self) -> int:
        return self.modules[0].tag.width

    def __len__(self) -> int:
        return len(self.modules)

    def instructions(self) -> Iterable[Instruction]:
        for m in self.modules:
            yield from m.body

    @property
    def size(self) -> int:
        return sum(len(m.body) for m in self.modules)

    @cached_property
    def compiled(self) -> CompiledProgram:
        return compile_program(self)

    def __getstate__(self):
        return {"modules": self.modules}

    def __setstate__(self, state):
        object.__setattr__(self, "modules", state["modules"])


def compile_program(p: Program) -> CompiledProgram:
    starts, lens, ops, args, tags, match = [], [], [], [], [], []
    for m in p.modules:
        start = len(ops)
        m_ops, m_args, m_tags, m_close = m.flat
        starts.append(start)
        lens.append(len(m_ops))
        ops.extend(m_ops)
        args.extend(m_args)
        tags.extend(m_tags)
        match.extend([c + start for c in m_close] if start else m_close)
    return CompiledProgram(
        width=p.width,
        module_tags=tuple(m.tag.bits for m in p.modules),
        module_start=tuple(starts),
        module_len=tuple(lens),
        ops=tuple(ops),
        args=tuple(args),
        inst_tags=tuple(tags),
        match_close=tuple(match),
    )


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    message: str


def validate(p: Program, limits: Limits = Limits()) -> list[Violation]:
    """Return every limit or arity violation; an empty list means valid."""
    out: list[Violation] = []
    if not 1 <= len(p.modules) <= limits.max_modules:
        out.append(Violation("module count", "program",
                             f"{len(p.modules)} modules, allowed 1..{limits.max_modules}"))
    for mi, m in enumerate(p.modules):
        loc = f"module {mi}"
        if m.tag.width != limits.width:
            out.append(Violation("tag width", loc, f"width {m.tag.width} != {limits.width}"))
        if not 1 <= len(m.body) <= limits.max_module_len:
            out.append(Violation("module length", loc,
                                 f"{len(m.body)} instructions, allowed 1..{limits.max_module_len}"))
        for ii, inst in enumerate(m.body):
            iloc = f"module {mi} instruction {ii}"
            if inst.op not in SPECS_BY_NAME:
                out.append(Violation("opcode", iloc, f"unknown opcode {inst.op!r}"))
            if inst.tag.width != limits.width:
                out.append(Violation("tag width", iloc, f"width {inst.tag.width} != {limits.width}"))
            if len(inst.args) != 3:
                out.append(Violation("arity", iloc, f"{len(inst.args)} arguments, expected 3"))
            for a in inst.args:
                if not isinstance(a, int) or not limits.arg_min <= a <= limits.arg_max:
                    out.append(Violation("argument range", iloc,
                                         f"argument {a} outside [{limits.arg_min}, {limits.arg_max}]"))
    return out


def random_instruction(rng, inst_set: Sequence[str], limits: Limits) -> Instruction:
    # one vector of uniforms is far cheaper than several rng.integers calls
    u = rng.random(4).tolist()
    span = limits.arg_max - limits.arg_min + 1
    args = tuple(limits.arg_min + int(x * span) for x in u[1:])
    return Instruction(inst_set[int(u[0] * len(inst_set))], Tag.random(rng, limits.width), args)


def random_module(rng, inst_set: Sequence[str], limits: Limits) -> ModuleDef:
    lo, hi = limits.init_module_len
    n = int(rng.integers(lo, hi + 1))
    return ModuleDef(Tag.random(rng, limits.width),
                     tuple(random_instruction(rng, inst_set, limits) for _ in range(n)))


def random_program(rng, limits: Limits = Limits(), inst_set: Sequence[str] = BASE_INSTRUCTIONS) -> Program:
    lo, hi = limits.init_modules
    n = int(rng.integers(lo, hi + 1))
    return Program(tuple(random_module(rng, inst_set, limits) for _ in range(n)))


# -- text format -----------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, line: int, column: int, reason: str):
        super().__init__(f"line {line}, column {column}: {reason}")
        self.line = line
        self.column = column
        self.reason = reason


def serialize_program(p: Program) -> str:
    lines = []
    for m in p.modules:
        lines.append(f"Fn {m.tag.to_string()}:")
        for inst in m.body:
            a0, a1, a2 = inst.args
            lines.append(f"  {inst.op} {inst.tag.to_string()} {a0} {a1} {a2}")
    return "\n".join(lines) + "\n"


_HEADER = re.compile(r"Fn\s+(\S+?)\s*:\s*$")
_TOKEN = re.compile(r"\S+")


def parse_program(text: str, width: int | None = None) -> Program:
    """Parse the line-oriented genome format.

    ``width`` pins the expected tag width; by default the first tag sets it.
    """
    modules: list[ModuleDef] = []
    cur_tag: Tag | None = None
    body: list[Instruction] = []

    def parse_tag(s: str, lineno: int, col: int) -> Tag:
        nonlocal width
        try:
            tag = Tag.from_string(s)
        except ValueError:
            raise ParseError(lineno, col, f"malformed tag {s!r}") from None
        if width is None:
            width = tag.width
        elif tag.width != width:
            raise ParseError(lineno, col, f"tag width {tag.width}, expected {width}")
        return tag

    def flush(lineno: int) -> None:
        if cur_tag is None:
            return
        if not body:
            raise ParseError(lineno, 1, "module has no instructions")
        modules.append(ModuleDef(cur_tag, tuple(body)))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line.lstrip().startswith("Fn"):
            m = _HEADER.match(line.strip())
            if not m:
                raise ParseError(lineno, 1, "malformed module header")
            flush(lineno)
            cur_tag = parse_tag(m.group(1), lineno, line.index(m.group(1)) + 1)
            body = []
            continue
        toks = [(t.group(), t.start() + 1) for t in _TOKEN.finditer(line)]
        if cur_tag is None:
            raise ParseError(lineno, toks[0][1], "instruction before any module header")
        if len(toks) != 5:
            raise ParseError(lineno, toks[0][1], f"expected 'Opcode tag a0 a1 a2', got {len(toks)} fields")
        (op, opcol), (tag_s, tagcol) = toks[0], toks[1]
        if op not in SPECS_BY_NAME:
            raise ParseError(lineno, opcol, f"unknown opcode {op!r}")
        tag = parse_tag(tag_s, lineno, tagcol)
        args = []
        for s, col in toks[2:]:
            try:
                args.append(int(s))
            except ValueError:
                raise ParseError(lineno, col, f"argument {s!r} is not an integer") from None
        body.append(Instruction(op, tag, tuple(args)))
    flush(len(text.splitlines()) + 1)
    if not modules:
        raise ParseError(1, 1, "no modules found")
    return Program(tuple(modules))


def load_program(path, width: int | None = None) -> Program:
    with open(path) as fh:
        return parse_program(fh.read(), width)


def save_program(p: Program, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_program(p))
