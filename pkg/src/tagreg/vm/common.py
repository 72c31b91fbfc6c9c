"""Definitions shared by the compiled and pure-Python hardware backends."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from ..tags import DEFAULT_REG_BASE, HAMMING, METRICS, STREAK, MatchConfig

# run status
RUNNING = "running"
HALTED = "halted"
TERMINATED = "terminated"
BUDGET_EXHAUSTED = "budget_exhausted"

# trace event kinds
INSTRUCTION_EXECUTED = "instruction_executed"
REGULATION_CHANGED = "regulation_changed"
SIGNAL_DISPATCHED = "signal_dispatched"
RESPONSE_EMITTED = "response_emitted"
OUTPUT_SUBMITTED = "output_submitted"
MODULE_CALLED = "module_called"
CALL_BLOCKED = "call_blocked"
THREAD_FORKED = "thread_forked"
THREAD_DROPPED = "thread_dropped"

TRACE_FIELDS = ("step", "kind", "thread", "module", "target", "opcode", "old", "new", "value")

U32 = 4294967296.0


class TraceEvent(NamedTuple):
    step: int
    kind: str
    thread: int = -1
    module: int = -1
    target: int = -1
    opcode: int = -1
    old: float = 0.0
    new: float = 0.0
    value: float = 0.0


@dataclass(frozen=True)
class VMConfig:
    metric: str = STREAK
    reg_base: float = DEFAULT_REG_BASE
    regulation_enabled: bool = True
    n_registers: int = 8
    n_global: int = 8
    max_threads: int = 16
    max_depth: int = 64
    # modifiers are clamped to [-reg_limit, reg_limit]
    reg_limit: float = 1000.0
    # 0 means modifiers persist; otherwise they halve every this many steps
    decay_half_life: int = 0

    def __post_init__(self):
        MatchConfig(self.metric, self.reg_base, self.regulation_enabled)
        for name in ("n_registers", "n_global", "max_threads", "max_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.reg_limit > 0:
            raise ValueError("reg_limit must be positive")
        if self.decay_half_life < 0:
            raise ValueError("decay_half_life must be >= 0")

    @property
    def match(self) -> MatchConfig:
        return MatchConfig(self.metric, self.reg_base, self.regulation_enabled)

    @property
    def decay_factor(self) -> float:
        if self.decay_half_life == 0:
            return 1.0
        return 0.5 ** (1.0 / self.decay_half_life)


def to_u32(x: float) -> int:
    """Truncate toward zero and wrap into [0, 2**32); non-finite maps to 0."""
    if not math.isfinite(x):
        return 0
    r = math.fmod(float(math.trunc(x)), U32)
    if r < 0:
        r += U32
    return int(r)


def floor_mod(a: float, b: float) -> float:
    r = math.fmod(a, b)
    if r != 0.0 and (r < 0.0) != (b < 0.0):
        r += b
    return r


__all__ = [
    "RUNNING", "HALTED", "TERMINATED", "BUDGET_EXHAUSTED", "TraceEvent", "VMConfig",
    "TRACE_FIELDS", "to_u32", "floor_mod", "METRICS", "STREAK", "HAMMING",
]
