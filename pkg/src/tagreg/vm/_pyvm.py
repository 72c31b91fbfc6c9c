"""Pure-Python hardware. Reference semantics for the compiled backend."""

from __future__ import annotations

import math

from ..genome import MAX_RESPONSES, OPCODE, OPNAME, REGULATION_OPS, RESPONSE_BASE, Program
from ..tags import Tag, raw_score_bits
from .common import (
    BUDGET_EXHAUSTED, CALL_BLOCKED, HALTED, INSTRUCTION_EXECUTED, MODULE_CALLED,
    OUTPUT_SUBMITTED, REGULATION_CHANGED, RESPONSE_EMITTED, RUNNING, SIGNAL_DISPATCHED,
    TERMINATED, THREAD_DROPPED, THREAD_FORKED, TraceEvent, VMConfig, floor_mod, to_u32,
)

_OP = OPCODE
_NAMES = OPNAME
_REG_CODES = frozenset(_OP[n] for n in REGULATION_OPS)


class Frame:
    __slots__ = ("module", "ip", "regs", "blocks")

    def __init__(self, module: int, regs: list[float]):
        self.module = module
        self.ip = 0
        self.regs = regs
        # (opener index within module, is_loop)
        self.blocks: list[tuple[int, bool]] = []


class Thread:
    __slots__ = ("id", "frames")

    def __init__(self, tid: int, frame: Frame):
        self.id = tid
        self.frames = [frame]


def _fin(x: float) -> float:
    return x if math.isfinite(x) else 0.0


class Hardware:
    """One program's runtime state.

    Global memory and regulation modifiers survive :meth:`thread_reset`;
    :meth:`full_reset` clears everything.
    """

    backend = "python"

    def __init__(self, program: Program, config: VMConfig = VMConfig(), trace: bool = False):
        self.program = program
        self.config = config
        self.trace_enabled = trace
        self._cp = program.compiled
        self._width = self._cp.width
        self._n_modules = len(self._cp.module_tags)
        self._rows: dict[int, list[float]] = {}
        self._decay = config.decay_factor
        self.full_reset()

    # -- state -------------------------------------------------------------

    def full_reset(self) -> None:
        self.reg_state = [0.0] * self._n_modules
        self.global_mem = [0.0] * self.config.n_global
        self.threads: list[Thread] = []
        self.trace: list[TraceEvent] = []
        self.responses: list[tuple[int, int]] = []
        self.outputs: list[tuple[int, float]] = []
        self.time = 0
        self.terminated = False
        self._next_tid = 0

    def thread_reset(self) -> None:
        self.threads = []
        self.terminated = False

    def set_regulation(self, module: int, value: float) -> None:
        self.reg_state[module] = float(value)

    @property
    def num_threads(self) -> int:
        return len(self.threads)

    def _emit(self, kind: str, **kw) -> None:
        self.trace.append(TraceEvent(self.time, kind, **kw))

    # -- tag matching ------------------------------------------------------

    def _row(self, query: int) -> list[float]:
        row = self._rows.get(query)
        if row is None:
            w, metric = self._width, self.config.metric
            row = [raw_score_bits(query, t, w, metric) for t in self._cp.module_tags]
            self._rows[query] = row
        return row

    def _match(self, query: int, regulated: bool) -> int:
        row = self._row(query)
        best, best_score = 0, -math.inf
        base = self.config.reg_base
        for i, raw in enumerate(row):
            score = raw
            if regulated:
                reg = self.reg_state[i]
                if reg != 0.0 and raw != 0.0:
                    try:
                        score = raw * base**reg
                    except OverflowError:
                        score = math.inf
            if score > best_score:
                best, best_score = i, score
        return best

    def match_module(self, tag: Tag | int, regulated: bool = True) -> int:
        return self._match(tag if isinstance(tag, int) else tag.bits, regulated)

    # -- signals and threads -----------------------------------------------

    def _spawn(self, module: int, regs: list[float]) -> int:
        tid = self._next_tid
        self._next_tid += 1
        self.threads.append(Thread(tid, Frame(module, regs)))
        return tid

    def dispatch_signal(self, tag: Tag | int, data=()) -> int | None:
        """Start a thread in the best regulated match for ``tag``."""
        query = tag if isinstance(tag, int) else tag.bits
        module = self._match(query, True)
        if len(self.threads) >= self.config.max_threads:
            if self.trace_enabled:
                self._emit(THREAD_DROPPED, module=module)
            return None
        regs = [0.0] * self.config.n_registers
        for i, v in enumerate(list(data)[: len(regs)]):
            regs[i] = float(v)
        tid = self._spawn(module, regs)
        if self.trace_enabled:
            self._emit(SIGNAL_DISPATCHED, thread=tid, module=module)
        return tid

    def step(self) -> str:
        if self.terminated:
            return TERMINATED
        if not self.threads:
            return HALTED
        live = self.threads[: len(self.threads)]
        for t in live:
            if t.frames:
                self._execute(t)
            if self.terminated:
                break
        self.threads = [t for t in self.threads if t.frames]
        self.time += 1
        if self._decay != 1.0:
            self.reg_state = [r * self._decay for r in self.reg_state]
        if self.terminated:
            return TERMINATED
        return RUNNING if self.threads else HALTED

    def run_until(self, budget: int) -> str:
        """Step until a response/output, all threads halt, or ``budget`` steps pass."""
        if budget <= 0:
            raise ValueError("budget must be positive")
        for _ in range(budget):
            status = self.step()
            if status != RUNNING:
                return status
        if self.terminated:
            return TERMINATED
        return BUDGET_EXHAUSTED if self.threads else HALTED

    # -- execution ---------------------------------------------------------

    def _normalize(self, t: Thread) -> None:
        cp = self._cp
        frames = t.frames
        while frames:
            f = frames[-1]
            if f.ip < cp.module_len[f.module]:
                return
            while f.blocks:
                opener, is_loop = f.blocks.pop()
                if is_loop:
                    f.ip = opener
                    return
            frames.pop()

    def _skip_past(self, f: Frame, local_ip: int) -> None:
        start = self._cp.module_start[f.module]
        f.ip = self._cp.match_close[start + local_ip] - start + 1

    def _regulate(self, tid: int, f: Frame, op: str, gi: int, regs: list[float], a0: int) -> None:
        own = "Own" in op
        target = f.module if own else self._match(self._cp.inst_tags[gi], False)
        old = self.reg_state[target]
        if op.startswith("Sense"):
            regs[a0] = old
            return
        if op.startswith("Set"):
            new = regs[a0] if op.endswith("+") else -regs[a0]
        elif op.startswith("Adj"):
            new = old + regs[a0] if op.endswith("+") else old - regs[a0]
        elif op.startswith("Clear"):
            new = 0.0
        elif op.startswith("Inc"):
            new = old + 1.0
        else:
            new = old - 1.0
        lim = self.config.reg_limit
        new = min(lim, max(-lim, _fin(new)))
        self.reg_state[target] = new
        if self.trace_enabled:
            self._emit(REGULATION_CHANGED, thread=tid, module=f.module, target=target, old=old, new=new)

    def _execute(self, t: Thread) -> None:
        cp = self._cp
        cfg = self.config
        f = t.frames[-1]
        local = f.ip
        gi = cp.module_start[f.module] + local
        code = cp.ops[gi]
        a0, a1, a2 = cp.args[gi]
        if self.trace_enabled:
            self._emit(INSTRUCTION_EXECUTED, thread=t.id, module=f.module, opcode=code)
        f.ip += 1
        r = f.regs
        nr = cfg.n_registers
        i0, i1, i2 = a0 % nr, a1 % nr, a2 % nr
        op = _NAMES[code]

        if code == _OP["Nop"]:
            pass
        elif code == _OP["Add"]:
            r[i2] = _fin(r[i0] + r[i1])
        elif code == _OP["Sub"]:
            r[i2] = _fin(r[i0] - r[i1])
        elif code == _OP["Mult"]:
            r[i2] = _fin(r[i0] * r[i1])
        elif code == _OP["Div"]:
            r[i2] = 0.0 if r[i1] == 0.0 else _fin(r[i0] / r[i1])
        elif code == _OP["Mod"]:
            r[i2] = 0.0 if r[i1] == 0.0 else _fin(floor_mod(r[i0], r[i1]))
        elif code == _OP["Inc"]:
            r[i0] = _fin(r[i0] + 1.0)
        elif code == _OP["Dec"]:
            r[i0] = _fin(r[i0] - 1.0)
        elif code == _OP["Nand"]:
            r[i2] = float(~(to_u32(r[i0]) & to_u32(r[i1])) & 0xFFFFFFFF)
        elif code == _OP["Not"]:
            r[i0] = 1.0 if r[i0] == 0.0 else 0.0
        elif code == _OP["TerminalVal"]:
            r[i0] = float(a1 * 9 + a2)
        elif code == _OP["TestEqu"]:
            r[i2] = 1.0 if r[i0] == r[i1] else 0.0
        elif code == _OP["TestNEqu"]:
            r[i2] = 1.0 if r[i0] != r[i1] else 0.0
        elif code == _OP["TestLess"]:
            r[i2] = 1.0 if r[i0] < r[i1] else 0.0
        elif code == _OP["TestLessEqu"]:
            r[i2] = 1.0 if r[i0] <= r[i1] else 0.0
        elif code == _OP["If"]:
            if r[i0] != 0.0:
                f.blocks.append((local, False))
            else:
                self._skip_past(f, local)
        elif code == _OP["While"]:
            if r[i0] != 0.0:
                f.blocks.append((local, True))
            else:
                self._skip_past(f, local)
        elif code == _OP["Countdown"]:
            if r[i0] > 0.0:
                r[i0] = r[i0] - 1.0
                f.blocks.append((local, True))
            else:
                self._skip_past(f, local)
        elif code == _OP["Close"]:
            if f.blocks:
                opener, is_loop = f.blocks.pop()
                if is_loop:
                    f.ip = opener
        elif code == _OP["Break"]:
            for k in range(len(f.blocks) - 1, -1, -1):
                opener, is_loop = f.blocks[k]
                if is_loop:
                    del f.blocks[k:]
                    self._skip_past(f, opener)
                    break
        elif code == _OP["CopyMem"]:
            r[i1] = r[i0]
        elif code == _OP["SwapMem"]:
            r[i0], r[i1] = r[i1], r[i0]
        elif code == _OP["SetMem"]:
            r[i0] = float(a1)
        elif code == _OP["GlobalToWorking"]:
            r[i1] = self.global_mem[a0 % cfg.n_global]
        elif code == _OP["WorkingToGlobal"]:
            self.global_mem[a1 % cfg.n_global] = r[i0]
        elif code == _OP["Call"]:
            if len(t.frames) >= cfg.max_depth:
                if self.trace_enabled:
                    self._emit(CALL_BLOCKED, thread=t.id, module=f.module)
            else:
                callee = self._match(cp.inst_tags[gi], True)
                if self.trace_enabled:
                    self._emit(MODULE_CALLED, thread=t.id, module=f.module, target=callee)
                t.frames.append(Frame(callee, [0.0] * nr))
        elif code == _OP["Return"]:
            t.frames.pop()
        elif code == _OP["Terminate"]:
            t.frames.clear()
        elif code == _OP["Fork"]:
            target = self._match(cp.inst_tags[gi], True)
            if len(self.threads) >= cfg.max_threads:
                if self.trace_enabled:
                    self._emit(THREAD_DROPPED, thread=t.id, module=f.module, target=target)
            else:
                tid = self._spawn(target, list(r))
                if self.trace_enabled:
                    self._emit(THREAD_FORKED, thread=t.id, module=f.module, target=target, value=float(tid))
        elif code in _REG_CODES:
            if cfg.regulation_enabled:
                self._regulate(t.id, f, op, gi, r, i0)
        elif RESPONSE_BASE <= code < RESPONSE_BASE + MAX_RESPONSES:
            k = code - RESPONSE_BASE
            self.responses.append((self.time, k))
            if self.trace_enabled:
                self._emit(RESPONSE_EMITTED, thread=t.id, module=f.module, value=float(k))
            self.terminated = True
        elif code == _OP["SubmitResult"]:
            self.outputs.append((self.time, r[i0]))
            if self.trace_enabled:
                self._emit(OUTPUT_SUBMITTED, thread=t.id, module=f.module, value=r[i0])
            self.terminated = True
        else:  # pragma: no cover
            raise AssertionError(f"unhandled opcode {code}")
        self._normalize(t)

