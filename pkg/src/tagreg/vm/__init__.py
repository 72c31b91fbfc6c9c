"""Tagged-module hardware with a compiled core and a pure-Python fallback.

The compiled backend is used when the extension is built and the
``TAGREG_PURE_PYTHON`` environment variable is unset or ``0``.
"""

import os

from ._pyvm import Hardware as PyHardware
from .common import (
    BUDGET_EXHAUSTED, HALTED, RUNNING, TERMINATED, TRACE_FIELDS, TraceEvent, VMConfig,
)

try:
    from ._cvm import Hardware as CompiledHardware
except ImportError:  # extension not built
    CompiledHardware = None

if CompiledHardware is not None and os.environ.get("TAGREG_PURE_PYTHON", "0") in ("", "0"):
    Hardware = CompiledHardware
else:
    Hardware = PyHardware

BACKEND = Hardware.backend

__all__ = [
    "Hardware", "PyHardware", "CompiledHardware", "BACKEND", "VMConfig", "TraceEvent",
    "TRACE_FIELDS", "RUNNING", "HALTED", "TERMINATED", "BUDGET_EXHAUSTED",
]
