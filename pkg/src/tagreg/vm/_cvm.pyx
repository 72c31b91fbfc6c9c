# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hardware backend.

Mirrors ``_pyvm.Hardware`` instruction for instruction; the two are checked
against each other by trace equality in the test suite.
"""

from cpython.mem cimport PyMem_Malloc, PyMem_Realloc, PyMem_Free
from libc.math cimport pow, fmod, trunc, isfinite, ldexp, INFINITY
from libc.stdint cimport uint64_t, uint32_t
from libc.string cimport memset, memcpy

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil

from ..genome import OPCODE
from .common import (
    BUDGET_EXHAUSTED, CALL_BLOCKED, HALTED, INSTRUCTION_EXECUTED, MODULE_CALLED,
    OUTPUT_SUBMITTED, REGULATION_CHANGED, RESPONSE_EMITTED, RUNNING, SIGNAL_DISPATCHED,
    TERMINATED, THREAD_DROPPED, THREAD_FORKED, TraceEvent, VMConfig,
)

cdef enum:
    OP_NOP = 0
    OP_ADD, OP_SUB, OP_MULT, OP_DIV, OP_MOD, OP_INC, OP_DEC, OP_NAND, OP_NOT, OP_TERMINALVAL
    OP_TESTEQU, OP_TESTNEQU, OP_TESTLESS, OP_TESTLESSEQU
    OP_IF, OP_WHILE, OP_COUNTDOWN, OP_BREAK, OP_CLOSE
    OP_COPYMEM, OP_SWAPMEM, OP_SETMEM
    OP_GLOBALTOWORKING, OP_WORKINGTOGLOBAL
    OP_CALL, OP_RETURN, OP_TERMINATE, OP_FORK
    OP_SETREG_P, OP_SETREG_N, OP_SETOWNREG_P, OP_SETOWNREG_N
    OP_ADJREG_P, OP_ADJREG_N, OP_ADJOWNREG_P, OP_ADJOWNREG_N
    OP_CLEARREG, OP_CLEAROWNREG, OP_SENSEREG, OP_SENSEOWNREG
    OP_INCREG, OP_INCOWNREG, OP_DECREG, OP_DECOWNREG
    OP_RESPONSE0
    OP_SUBMIT = OP_RESPONSE0 + 16

_EXPECTED = {
    "Nop": OP_NOP, "Add": OP_ADD, "TerminalVal": OP_TERMINALVAL, "TestEqu": OP_TESTEQU, "If": OP_IF,
    "Close": OP_CLOSE, "CopyMem": OP_COPYMEM, "GlobalToWorking": OP_GLOBALTOWORKING, "Call": OP_CALL,
    "Fork": OP_FORK, "SetRegulator+": OP_SETREG_P, "DecOwnRegulator": OP_DECOWNREG,
    "Response-0": OP_RESPONSE0, "Response-15": OP_RESPONSE0 + 15, "SubmitResult": OP_SUBMIT,
}
for _name, _code in _EXPECTED.items():
    if OPCODE[_name] != _code:
        raise ImportError(f"opcode table out of sync at {_name}")
if len(OPCODE) != OP_SUBMIT + 1:
    raise ImportError("opcode table size out of sync")


cdef struct Frame:
    int module
    int ip
    int block_base

cdef struct Block:
    int opener
    int is_loop

cdef struct ThreadState:
    long tid
    int depth
    Frame* frames
    double* regs
    Block* blocks
    int nblocks
    int cap
    int in_use


cdef inline double fin(double x) nogil:
    return x if isfinite(x) else 0.0


cdef inline uint32_t to_u32(double x) nogil:
    cdef double r
    if not isfinite(x):
        return 0
    r = fmod(trunc(x), 4294967296.0)
    if r < 0:
        r += 4294967296.0
    return <uint32_t>r


cdef inline double floor_mod(double a, double b) nogil:
    cdef double r = fmod(a, b)
    if r != 0.0 and ((r < 0.0) != (b < 0.0)):
        r += b
    return r


cdef inline int pymod(long a, long n) nogil:
    return <int>(((a % n) + n) % n)


cdef int longest_run(uint64_t* x, int nw) nogil:
    cdef int n = 0, k
    cdef uint64_t carry, nxt, any_set
    while True:
        any_set = 0
        for k in range(nw):
            any_set |= x[k]
        if any_set == 0:
            return n
        carry = 0
        for k in range(nw):
            nxt = x[k] >> 63
            x[k] = x[k] & ((x[k] << 1) | carry)
            carry = nxt
        n += 1


cdef inline double streak_p(int w, int k) nogil:
    cdef double v = ldexp(<double>(w - k + 2), -(k + 1))
    return 1.0 if v > 1.0 else v


cdef class Hardware:
    cdef readonly object program
    cdef readonly object config
    cdef public bint trace_enabled
    cdef public list trace
    cdef public list responses
    cdef public list outputs
    cdef readonly long time
    cdef readonly bint terminated

    cdef int M, N, W, nw, R, G, T, D
    cdef double base, lim, decay
    cdef bint reg_on, hamming
    cdef tuple inst_tags
    cdef int* ops
    cdef int* mstart
    cdef int* mlen
    cdef int* mclose
    cdef int* r0
    cdef int* r1
    cdef int* r2
    cdef int* g0
    cdef int* g1
    cdef int* arg1
    cdef int* arg2
    cdef uint64_t* mtags
    cdef uint64_t* scratch
    cdef double* rows
    cdef char* row_done
    cdef double* sigrow
    cdef double* reg
    cdef double* gmem
    cdef ThreadState* th
    cdef int* order
    cdef int n_active
    cdef long next_tid

    backend = "compiled"

    def __cinit__(self, program, config=VMConfig(), trace=False):
        self.ops = NULL
        self.th = NULL

    def __init__(self, program, config=VMConfig(), bint trace=False):
        cdef int i, k, m, n, j, idx, start, blen, sp, code
        cdef int* stack
        modules = program.modules
        self.program = program
        self.config = config
        self.trace_enabled = trace
        self.M = len(modules)
        self.N = 0
        for mod in modules:
            self.N += len(mod.body)
        self.W = modules[0].tag.width
        self.nw = (self.W + 63) // 64
        self.R = config.n_registers
        self.G = config.n_global
        self.T = config.max_threads
        self.D = config.max_depth
        self.base = config.reg_base
        self.lim = config.reg_limit
        self.decay = config.decay_factor
        self.reg_on = config.regulation_enabled
        self.hamming = config.metric == "hamming"

        n = self.N if self.N > 0 else 1
        self.ops = <int*>PyMem_Malloc(n * 11 * sizeof(int))
        self.mclose = self.ops + n
        self.r0 = self.ops + 2 * n
        self.r1 = self.ops + 3 * n
        self.r2 = self.ops + 4 * n
        self.g0 = self.ops + 5 * n
        self.g1 = self.ops + 6 * n
        self.arg1 = self.ops + 7 * n
        self.arg2 = self.ops + 8 * n
        self.mstart = <int*>PyMem_Malloc(2 * self.M * sizeof(int))
        self.mlen = self.mstart + self.M
        self.mtags = <uint64_t*>PyMem_Malloc((self.M + 3) * self.nw * sizeof(uint64_t))
        self.scratch = self.mtags + self.M * self.nw
        self.rows = <double*>PyMem_Malloc((n + 1) * self.M * sizeof(double))
        self.sigrow = self.rows + n * self.M
        self.row_done = <char*>PyMem_Malloc(n)
        self.reg = <double*>PyMem_Malloc((self.M + self.G) * sizeof(double))
        self.gmem = self.reg + self.M
        self.th = <ThreadState*>PyMem_Malloc(self.T * sizeof(ThreadState))
        self.order = <int*>PyMem_Malloc(self.T * sizeof(int))
        if (self.ops == NULL or self.mstart == NULL or self.mtags == NULL or self.rows == NULL
                or self.row_done == NULL or self.reg == NULL or self.th == NULL or self.order == NULL):
            raise MemoryError()
        memset(self.th, 0, self.T * sizeof(ThreadState))
        memset(self.row_done, 0, n)

        # flatten modules straight from the genome; same layout as compile_program
        stack = <int*>PyMem_Malloc(n * sizeof(int))
        if stack == NULL:
            raise MemoryError()
        tags = []
        idx = 0
        try:
            for m in range(self.M):
                mod = modules[m]
                body = mod.body
                blen = len(body)
                start = idx
                self.mstart[m] = start
                self.mlen[m] = blen
                self._load_tag(mod.tag.bits, self.mtags + m * self.nw)
                sp = 0
                for inst in body:
                    code = inst.code
                    self.ops[idx] = code
                    self.mclose[idx] = start + blen
                    if code == OP_IF or code == OP_WHILE or code == OP_COUNTDOWN:
                        stack[sp] = idx
                        sp += 1
                    elif code == OP_CLOSE and sp > 0:
                        sp -= 1
                        self.mclose[stack[sp]] = idx
                    a0, a1, a2 = inst.args
                    self.r0[idx] = pymod(a0, self.R)
                    self.r1[idx] = pymod(a1, self.R)
                    self.r2[idx] = pymod(a2, self.R)
                    self.g0[idx] = pymod(a0, self.G)
                    self.g1[idx] = pymod(a1, self.G)
                    self.arg1[idx] = a1
                    self.arg2[idx] = a2
                    tags.append(inst.tag.bits)
                    idx += 1
        finally:
            PyMem_Free(stack)
        self.inst_tags = tuple(tags)
        self.full_reset()

    def __dealloc__(self):
        cdef int i
        if self.th != NULL:
            for i in range(self.T):
                PyMem_Free(self.th[i].frames)
                PyMem_Free(self.th[i].regs)
                PyMem_Free(self.th[i].blocks)
        PyMem_Free(self.th)
        PyMem_Free(self.order)
        PyMem_Free(self.ops)
        PyMem_Free(self.mstart)
        PyMem_Free(self.mtags)
        PyMem_Free(self.rows)
        PyMem_Free(self.row_done)
        PyMem_Free(self.reg)

    cdef void _load_tag(self, object value, uint64_t* out):
        cdef int k
        for k in range(self.nw):
            out[k] = <uint64_t>((value >> (64 * k)) & 0xFFFFFFFFFFFFFFFF)

    # -- state -------------------------------------------------------------

    def full_reset(self):
        memset(self.reg, 0, (self.M + self.G) * sizeof(double))
        self._clear_threads()
        self.trace = []
        self.responses = []
        self.outputs = []
        self.time = 0
        self.terminated = False
        self.next_tid = 0

    def thread_reset(self):
        self._clear_threads()
        self.terminated = False

    cdef void _clear_threads(self):
        cdef int i
        for i in range(self.T):
            self.th[i].in_use = 0
            self.th[i].depth = 0
        self.n_active = 0

    @property
    def num_threads(self):
        return self.n_active

    @property
    def reg_state(self):
        return [self.reg[i] for i in range(self.M)]

    @property
    def global_mem(self):
        return [self.gmem[i] for i in range(self.G)]

    def set_regulation(self, int module, double value):
        self.reg[module] = value

    cdef void _emit(self, str kind, long thread, int module, int target, int opcode,
                    double old, double new, double value):
        self.trace.append(TraceEvent(self.time, kind, thread, module, target, opcode, old, new, value))

    # -- tag matching ------------------------------------------------------

    cdef void _score_row(self, uint64_t* q, double* out):
        cdef int m, k, w = self.W, km, kn, pc
        cdef uint64_t* mt
        cdef uint64_t* diff = self.scratch + self.nw
        cdef uint64_t* same = self.scratch + 2 * self.nw
        cdef uint64_t top_mask
        cdef double pm, pn
        if w % 64 == 0:
            top_mask = 0xFFFFFFFFFFFFFFFF
        else:
            top_mask = ((<uint64_t>1) << (w % 64)) - 1
        for m in range(self.M):
            mt = self.mtags + m * self.nw
            pc = 0
            for k in range(self.nw):
                diff[k] = q[k] ^ mt[k]
                same[k] = ~diff[k]
                pc += __builtin_popcountll(diff[k])
            same[self.nw - 1] &= top_mask
            if self.hamming:
                out[m] = <double>(w - pc) / <double>w
                continue
            kn = longest_run(diff, self.nw)
            km = longest_run(same, self.nw)
            pm = streak_p(w, km)
            pn = streak_p(w, kn)
            out[m] = pn / (pm + pn)

    cdef double* _inst_row(self, int gi):
        cdef double* row = self.rows + gi * self.M
        if not self.row_done[gi]:
            self._load_tag(self.inst_tags[gi], self.scratch)
            self._score_row(self.scratch, row)
            self.row_done[gi] = 1
        return row

    cdef int _argmax(self, double* row, bint regulated):
        cdef int i, best = 0
        cdef double s, r, best_score = -INFINITY
        for i in range(self.M):
            s = row[i]
            if regulated:
                r = self.reg[i]
                if r != 0.0 and s != 0.0:
                    s = s * pow(self.base, r)
            if s > best_score:
                best = i
                best_score = s
        return best

    def match_module(self, tag, bint regulated=True):
        value = tag if isinstance(tag, int) else tag.bits
        self._load_tag(value, self.scratch)
        self._score_row(self.scratch, self.sigrow)
        return self._argmax(self.sigrow, regulated)

    # -- threads -----------------------------------------------------------

    cdef int _spawn(self, int module) except -1:
        cdef int s
        cdef ThreadState* t
        for s in range(self.T):
            if not self.th[s].in_use:
                break
        t = &self.th[s]
        if t.frames == NULL:
            t.frames = <Frame*>PyMem_Malloc(self.D * sizeof(Frame))
            t.regs = <double*>PyMem_Malloc(self.D * self.R * sizeof(double))
            t.cap = 16
            t.blocks = <Block*>PyMem_Malloc(t.cap * sizeof(Block))
            if t.frames == NULL or t.regs == NULL or t.blocks == NULL:
                raise MemoryError()
        t.in_use = 1
        t.tid = self.next_tid
        self.next_tid += 1
        t.depth = 1
        t.nblocks = 0
        t.frames[0].module = module
        t.frames[0].ip = 0
        t.frames[0].block_base = 0
        memset(t.regs, 0, self.R * sizeof(double))
        self.order[self.n_active] = s
        self.n_active += 1
        return s

    cdef int _push_block(self, ThreadState* t, int opener, int is_loop) except -1:
        cdef Block* nb
        if t.nblocks == t.cap:
            nb = <Block*>PyMem_Realloc(t.blocks, 2 * t.cap * sizeof(Block))
            if nb == NULL:
                raise MemoryError()
            t.blocks = nb
            t.cap *= 2
        t.blocks[t.nblocks].opener = opener
        t.blocks[t.nblocks].is_loop = is_loop
        t.nblocks += 1
        return 0

    def dispatch_signal(self, tag, data=()):
        cdef int module, s, i
        value = tag if isinstance(tag, int) else tag.bits
        self._load_tag(value, self.scratch)
        self._score_row(self.scratch, self.sigrow)
        module = self._argmax(self.sigrow, True)
        if self.n_active >= self.T:
            if self.trace_enabled:
                self._emit(THREAD_DROPPED, -1, module, -1, -1, 0.0, 0.0, 0.0)
            return None
        s = self._spawn(module)
        vals = list(data)
        for i in range(min(len(vals), self.R)):
            self.th[s].regs[i] = float(vals[i])
        if self.trace_enabled:
            self._emit(SIGNAL_DISPATCHED, self.th[s].tid, module, -1, -1, 0.0, 0.0, 0.0)
        return self.th[s].tid

    cdef int _step(self) except -2:
        # 0 running, 1 halted, 2 terminated
        cdef int i, j, n, s
        if self.terminated:
            return 2
        if self.n_active == 0:
            return 1
        n = self.n_active
        for i in range(n):
            s = self.order[i]
            if self.th[s].depth > 0:
                self._execute(&self.th[s])
            if self.terminated:
                break
        j = 0
        for i in range(self.n_active):
            s = self.order[i]
            if self.th[s].depth > 0:
                self.order[j] = s
                j += 1
            else:
                self.th[s].in_use = 0
        self.n_active = j
        self.time += 1
        if self.decay != 1.0:
            for i in range(self.M):
                self.reg[i] = self.reg[i] * self.decay
        if self.terminated:
            return 2
        return 0 if self.n_active > 0 else 1

    def step(self):
        return (RUNNING, HALTED, TERMINATED)[self._step()]

    def run_until(self, int budget):
        cdef int i, status
        if budget <= 0:
            raise ValueError("budget must be positive")
        for i in range(budget):
            status = self._step()
            if status == 1:
                return HALTED
            if status == 2:
                return TERMINATED
        if self.terminated:
            return TERMINATED
        return BUDGET_EXHAUSTED if self.n_active > 0 else HALTED

    # -- execution ---------------------------------------------------------

    cdef inline void _normalize(self, ThreadState* t):
        cdef Frame* f
        cdef Block b
        while t.depth > 0:
            f = &t.frames[t.depth - 1]
            if f.ip < self.mlen[f.module]:
                return
            while t.nblocks > f.block_base:
                t.nblocks -= 1
                b = t.blocks[t.nblocks]
                if b.is_loop:
                    f.ip = b.opener
                    return
            t.depth -= 1

    cdef inline void _skip_past(self, Frame* f, int local):
        cdef int start = self.mstart[f.module]
        f.ip = self.mclose[start + local] - start + 1

    cdef void _regulate(self, long tid, Frame* f, int code, int gi, double* r, int i0):
        cdef int target
        cdef double old, new
        if code == OP_SETOWNREG_P or code == OP_SETOWNREG_N or code == OP_ADJOWNREG_P or code == OP_ADJOWNREG_N \
                or code == OP_CLEAROWNREG or code == OP_SENSEOWNREG or code == OP_INCOWNREG or code == OP_DECOWNREG:
            target = f.module
        else:
            target = self._argmax(self._inst_row(gi), False)
        old = self.reg[target]
        if code == OP_SENSEREG or code == OP_SENSEOWNREG:
            r[i0] = old
            return
        if code == OP_SETREG_P or code == OP_SETOWNREG_P:
            new = r[i0]
        elif code == OP_SETREG_N or code == OP_SETOWNREG_N:
            new = -r[i0]
        elif code == OP_ADJREG_P or code == OP_ADJOWNREG_P:
            new = old + r[i0]
        elif code == OP_ADJREG_N or code == OP_ADJOWNREG_N:
            new = old - r[i0]
        elif code == OP_CLEARREG or code == OP_CLEAROWNREG:
            new = 0.0
        elif code == OP_INCREG or code == OP_INCOWNREG:
            new = old + 1.0
        else:
            new = old - 1.0
        new = fin(new)
        if new > self.lim:
            new = self.lim
        elif new < -self.lim:
            new = -self.lim
        self.reg[target] = new
        if self.trace_enabled:
            self._emit(REGULATION_CHANGED, tid, f.module, target, -1, old, new, 0.0)

    cdef void _execute(self, ThreadState* t) except *:
        cdef Frame* f = &t.frames[t.depth - 1]
        cdef int local = f.ip
        cdef int gi = self.mstart[f.module] + local
        cdef int code = self.ops[gi]
        cdef double* r = t.regs + (t.depth - 1) * self.R
        cdef int i0 = self.r0[gi], i1 = self.r1[gi], i2 = self.r2[gi]
        cdef int k, target, s
        cdef double tmp
        cdef uint32_t u
        if self.trace_enabled:
            self._emit(INSTRUCTION_EXECUTED, t.tid, f.module, -1, code, 0.0, 0.0, 0.0)
        f.ip += 1

        if code == OP_NOP:
            pass
        elif code == OP_ADD:
            r[i2] = fin(r[i0] + r[i1])
        elif code == OP_SUB:
            r[i2] = fin(r[i0] - r[i1])
        elif code == OP_MULT:
            r[i2] = fin(r[i0] * r[i1])
        elif code == OP_DIV:
            r[i2] = 0.0 if r[i1] == 0.0 else fin(r[i0] / r[i1])
        elif code == OP_MOD:
            r[i2] = 0.0 if r[i1] == 0.0 else fin(floor_mod(r[i0], r[i1]))
        elif code == OP_INC:
            r[i0] = fin(r[i0] + 1.0)
        elif code == OP_DEC:
            r[i0] = fin(r[i0] - 1.0)
        elif code == OP_NAND:
            u = ~(to_u32(r[i0]) & to_u32(r[i1]))
            r[i2] = <double>u
        elif code == OP_NOT:
            r[i0] = 1.0 if r[i0] == 0.0 else 0.0
        elif code == OP_TERMINALVAL:
            r[i0] = <double>(self.arg1[gi] * 9 + self.arg2[gi])
        elif code == OP_TESTEQU:
            r[i2] = 1.0 if r[i0] == r[i1] else 0.0
        elif code == OP_TESTNEQU:
            r[i2] = 1.0 if r[i0] != r[i1] else 0.0
        elif code == OP_TESTLESS:
            r[i2] = 1.0 if r[i0] < r[i1] else 0.0
        elif code == OP_TESTLESSEQU:
            r[i2] = 1.0 if r[i0] <= r[i1] else 0.0
        elif code == OP_IF:
            if r[i0] != 0.0:
                self._push_block(t, local, 0)
            else:
                self._skip_past(f, local)
        elif code == OP_WHILE:
            if r[i0] != 0.0:
                self._push_block(t, local, 1)
            else:
                self._skip_past(f, local)
        elif code == OP_COUNTDOWN:
            if r[i0] > 0.0:
                r[i0] = r[i0] - 1.0
                self._push_block(t, local, 1)
            else:
                self._skip_past(f, local)
        elif code == OP_CLOSE:
            if t.nblocks > f.block_base:
                t.nblocks -= 1
                if t.blocks[t.nblocks].is_loop:
                    f.ip = t.blocks[t.nblocks].opener
        elif code == OP_BREAK:
            k = t.nblocks - 1
            while k >= f.block_base:
                if t.blocks[k].is_loop:
                    t.nblocks = k
                    self._skip_past(f, t.blocks[k].opener)
                    break
                k -= 1
        elif code == OP_COPYMEM:
            r[i1] = r[i0]
        elif code == OP_SWAPMEM:
            tmp = r[i0]
            r[i0] = r[i1]
            r[i1] = tmp
        elif code == OP_SETMEM:
            r[i0] = <double>self.arg1[gi]
        elif code == OP_GLOBALTOWORKING:
            r[i1] = self.gmem[self.g0[gi]]
        elif code == OP_WORKINGTOGLOBAL:
            self.gmem[self.g1[gi]] = r[i0]
        elif code == OP_CALL:
            if t.depth >= self.D:
                if self.trace_enabled:
                    self._emit(CALL_BLOCKED, t.tid, f.module, -1, -1, 0.0, 0.0, 0.0)
            else:
                target = self._argmax(self._inst_row(gi), True)
                if self.trace_enabled:
                    self._emit(MODULE_CALLED, t.tid, f.module, target, -1, 0.0, 0.0, 0.0)
                t.frames[t.depth].module = target
                t.frames[t.depth].ip = 0
                t.frames[t.depth].block_base = t.nblocks
                memset(t.regs + t.depth * self.R, 0, self.R * sizeof(double))
                t.depth += 1
        elif code == OP_RETURN:
            t.nblocks = f.block_base
            t.depth -= 1
        elif code == OP_TERMINATE:
            t.nblocks = 0
            t.depth = 0
        elif code == OP_FORK:
            target = self._argmax(self._inst_row(gi), True)
            if self.n_active >= self.T:
                if self.trace_enabled:
                    self._emit(THREAD_DROPPED, t.tid, f.module, target, -1, 0.0, 0.0, 0.0)
            else:
                s = self._spawn(target)
                # _spawn may not move t: thread states live in a fixed array
                memcpy(self.th[s].regs, r, self.R * sizeof(double))
                if self.trace_enabled:
                    self._emit(THREAD_FORKED, t.tid, f.module, target, -1, 0.0, 0.0,
                               <double>self.th[s].tid)
        elif OP_SETREG_P <= code <= OP_DECOWNREG:
            if self.reg_on:
                self._regulate(t.tid, f, code, gi, r, i0)
        elif OP_RESPONSE0 <= code < OP_SUBMIT:
            k = code - OP_RESPONSE0
            self.responses.append((self.time, k))
            if self.trace_enabled:
                self._emit(RESPONSE_EMITTED, t.tid, f.module, -1, -1, 0.0, 0.0, <double>k)
            self.terminated = True
        elif code == OP_SUBMIT:
            self.outputs.append((self.time, r[i0]))
            if self.trace_enabled:
                self._emit(OUTPUT_SUBMITTED, t.tid, f.module, -1, -1, 0.0, 0.0, r[i0])
            self.terminated = True
        self._normalize(t)
