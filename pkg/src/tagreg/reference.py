"""Hand-coded reference programs and the signal tags they were written against.

Each reference is shipped as a genome file plus a tag CSV under ``data/``.
The builders here regenerate them; tests check the two agree.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from . import problems
from .genome import Instruction, ModuleDef, Program, load_program, save_program
from .problems import ProblemConfig
from .tags import DEFAULT_WIDTH, Tag
from .vm import VMConfig

DATA = "data"
# signal tags for the changing-signal references are drawn from this seed
CHANGING_TAG_SEED = 2020
REPRESSOR_MODULE = 5
REPRESSED_MODULE = 7


def _zero(width: int = DEFAULT_WIDTH) -> Tag:
    return Tag(0, width)


def _inst(op: str, *args: int, tag: Tag | None = None, width: int = DEFAULT_WIDTH) -> Instruction:
    args = tuple(args) + (0,) * (3 - len(args))
    return Instruction(op, tag if tag is not None else _zero(width), args)


def zero_run_tag(run: int, width: int = DEFAULT_WIDTH) -> Tag:
    """Tag whose longest run of zeros is ``run`` and longest run of ones is 1.

    Against the all-zero tag a longer ``run`` gives a higher streak score.
    """
    body = ("10" * width)[: width - run]
    return Tag.from_string("0" * run + body)


def self_repression(k: int = 4, width: int = DEFAULT_WIDTH) -> Program:
    """Module i answers Response-i and then represses itself.

    Module tags get steadily worse matches to the all-zero signal, so each
    repression hands the next signal to the following module.
    """
    modules = []
    for i in range(k):
        body = (
            _inst("SetMem", 0, 4, width=width),
            _inst("Mult", 0, 0, 0, width=width),  # r0 = 16
            _inst("SetOwnRegulator-", 0, width=width),
            _inst(f"Response-{i}", width=width),
        )
        modules.append(ModuleDef(zero_run_tag(11 - i, width), body))
    return Program(tuple(modules))


def global_memory_counter(width: int = DEFAULT_WIDTH) -> Program:
    """Remembers whether it has answered before in global memory slot 0."""
    body = (
        _inst("GlobalToWorking", 0, 0, width=width),  # r0 = g0
        _inst("If", 0, width=width),
        _inst("Response-1", width=width),
        _inst("Close", width=width),
        _inst("SetMem", 1, 1, width=width),
        _inst("WorkingToGlobal", 1, 0, width=width),  # g0 = r1
        _inst("Response-0", width=width),
    )
    return Program((ModuleDef(_zero(width), body),))


def repeated_config(k: int, regulation: bool = True, width: int = DEFAULT_WIDTH) -> ProblemConfig:
    return ProblemConfig(problems.REPEATED, (_zero(width),), k=k,
                         vm=VMConfig(regulation_enabled=regulation))


def changing_tags(width: int = DEFAULT_WIDTH) -> tuple[Tag, ...]:
    rng = np.random.default_rng(CHANGING_TAG_SEED)
    return problems.random_signal_tags(rng, problems.CHANGING_SIGNALS, width)


def changing_config(regulation: bool = True, width: int = DEFAULT_WIDTH) -> ProblemConfig:
    return ProblemConfig(problems.CHANGING, changing_tags(width),
                         vm=VMConfig(regulation_enabled=regulation))


def hardwired_changing(width: int = DEFAULT_WIDTH) -> Program:
    """Module m carries signal m's tag and answers Response-m."""
    return Program(tuple(
        ModuleDef(tag, (_inst(f"Response-{m}", width=width),))
        for m, tag in enumerate(changing_tags(width))
    ))


def cryptic_changing(width: int = DEFAULT_WIDTH) -> Program:
    """Hardwired program whose module 5 also silences module 7.

    Correct whenever signal 7 arrives before signal 5; wrong otherwise.
    """
    tags = changing_tags(width)
    modules = list(hardwired_changing(width).modules)
    modules[REPRESSOR_MODULE] = ModuleDef(tags[REPRESSOR_MODULE], (
        _inst("SetMem", 0, 4, width=width),
        _inst("Mult", 0, 0, 0, width=width),
        _inst("Mult", 0, 0, 0, width=width),  # r0 = 256
        _inst("SetRegulator-", 0, tag=tags[REPRESSED_MODULE], width=width),
        _inst(f"Response-{REPRESSOR_MODULE}", width=width),
    ))
    return Program(tuple(modules))


# 4-bit walkthrough: a caller module calls 1001 twice; the first callee
# promotes module 2 so the second call lands there, and module 2 then
# clears its own modifier.
WALKTHROUGH_WIDTH = 4
WALKTHROUGH_SIGNAL = "0110"


def walkthrough() -> Program:
    t = Tag.from_string
    w = WALKTHROUGH_WIDTH
    return Program((
        ModuleDef(t("0000"), (_inst("Nop", width=w),)),
        ModuleDef(t("0110"), (_inst("Call", tag=t("1001"), width=w),
                              _inst("Call", tag=t("1001"), width=w))),
        ModuleDef(t("1000"), (_inst("ClearOwnRegulator", width=w),)),
        ModuleDef(t("1001"), (_inst("SetMem", 0, 4, width=w),
                              _inst("SetRegulator+", 0, tag=t("1000"), width=w))),
    ))


def walkthrough_config() -> VMConfig:
    return VMConfig(metric="hamming")


BUILDERS = {
    "self_repression_k4": lambda: self_repression(4),
    "global_memory_k2": global_memory_counter,
    "hardwired_changing": hardwired_changing,
    "cryptic_changing": cryptic_changing,
    "walkthrough": walkthrough,
}

# reference name -> ProblemConfig factory (walkthrough has none)
CONFIGS = {
    "self_repression_k4": lambda: repeated_config(4),
    "global_memory_k2": lambda: repeated_config(2),
    "hardwired_changing": changing_config,
    "cryptic_changing": changing_config,
}


def data_path(name: str) -> Path:
    return Path(str(resources.files("tagreg") / DATA / name))


def load(name: str) -> Program:
    """Load a shipped reference genome by name."""
    if name not in BUILDERS:
        raise KeyError(f"unknown reference {name!r}; choose from {sorted(BUILDERS)}")
    return load_program(data_path(f"{name}.gp"))


def write_all(directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        save_program(build(), directory / f"{name}.gp")
        if name in CONFIGS:
            problems.write_tags_csv(directory / f"{name}_tags.csv", CONFIGS[name]())


if __name__ == "__main__":
    write_all(Path(__file__).parent / DATA)
