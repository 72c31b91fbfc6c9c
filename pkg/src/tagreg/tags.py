"""Fixed-width bit-string tags and tag-based referencing.

Tags are stored as Python ints plus a width. Bit 0 of the serialized string
is the most significant bit of the int. Contiguity of runs does not depend
on orientation, so similarity scores are the same either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

DEFAULT_WIDTH = 256
DEFAULT_REG_BASE = 1.1

STREAK = "streak"
HAMMING = "hamming"
METRICS = (STREAK, HAMMING)


class TagWidthError(ValueError):
    """Raised when tags of different widths are compared."""


@dataclass(frozen=True, slots=True)
class Tag:
    bits: int
    width: int

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"tag width must be positive, got {self.width}")
        if self.bits < 0 or self.bits >> self.width:
            raise ValueError(f"value {self.bits} does not fit in {self.width} bits")

    @classmethod
    def from_string(cls, s: str) -> "Tag":
        if not s or any(c not in "01" for c in s):
            raise ValueError(f"not a bit string: {s!r}")
        return cls(int(s, 2), len(s))

    @classmethod
    def random(cls, rng, width: int = DEFAULT_WIDTH) -> "Tag":
        """Uniform tag from a numpy Generator (raw 64-bit words, much faster than rng.bytes)."""
        words = (width + 63) // 64
        raw = rng.bit_generator.random_raw(words)
        value = int.from_bytes(raw.tobytes(), "little") >> (64 * words - width)
        return cls(value, width)

    def to_string(self) -> str:
        return format(self.bits, f"0{self.width}b")

    def flip(self, position: int) -> "Tag":
        """Flip the bit at string index ``position``."""
        return Tag(self.bits ^ (1 << (self.width - 1 - position)), self.width)

    def __invert__(self) -> "Tag":
        return Tag(self.bits ^ ((1 << self.width) - 1), self.width)

    def __str__(self) -> str:
        return self.to_string()


@dataclass(frozen=True)
class MatchConfig:
    metric: str = STREAK
    reg_base: float = DEFAULT_REG_BASE
    regulation_enabled: bool = True

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if not self.reg_base > 1.0 or not math.isfinite(self.reg_base):
            raise ValueError(f"reg_base must be a finite value > 1, got {self.reg_base}")


def _check(a: Tag, b: Tag) -> None:
    if a.width != b.width:
        raise TagWidthError(f"tag widths differ: {a.width} vs {b.width}")


def _longest_run(x: int) -> int:
    # each x &= x << 1 shortens every run of ones by exactly one
    n = 0
    while x:
        x &= x << 1
        n += 1
    return n


def longest_streaks(a: Tag, b: Tag) -> tuple[int, int]:
    """Return (longest matching run, longest mismatching run) of two tags."""
    _check(a, b)
    diff = a.bits ^ b.bits
    same = diff ^ ((1 << a.width) - 1)
    return _longest_run(same), _longest_run(diff)


def streak_probability(width: int, k: int) -> float:
    """Chance-level rarity of seeing a run of length ``k`` in ``width`` bits."""
    return min(1.0, math.ldexp(width - k + 2, -(k + 1)))


def streak_from_runs(width: int, k_match: int, k_mismatch: int) -> float:
    p_match = streak_probability(width, k_match)
    p_mismatch = streak_probability(width, k_mismatch)
    return p_mismatch / (p_match + p_mismatch)


def streak_similarity(a: Tag, b: Tag) -> float:
    k_match, k_mismatch = longest_streaks(a, b)
    return streak_from_runs(a.width, k_match, k_mismatch)


def hamming_similarity(a: Tag, b: Tag) -> float:
    _check(a, b)
    return (a.width - (a.bits ^ b.bits).bit_count()) / a.width


SIMILARITY = {STREAK: streak_similarity, HAMMING: hamming_similarity}


def raw_score_bits(a: int, b: int, width: int, metric: str = STREAK) -> float:
    """Similarity of two already-validated tag values of the same width."""
    diff = a ^ b
    if metric == HAMMING:
        return (width - diff.bit_count()) / width
    k_mismatch = _longest_run(diff)
    k_match = _longest_run(diff ^ ((1 << width) - 1))
    return streak_from_runs(width, k_match, k_mismatch)


def similarity(a: Tag, b: Tag, metric: str = STREAK) -> float:
    return SIMILARITY[metric](a, b)


def regulated_score(raw: float, reg: float, cfg: MatchConfig | float = DEFAULT_REG_BASE) -> float:
    """Scale a raw match score by ``reg_base ** reg``.

    ``cfg`` may be a MatchConfig or the base itself.
    """
    base = cfg.reg_base if isinstance(cfg, MatchConfig) else float(cfg)
    if not (math.isfinite(raw) and math.isfinite(reg)):
        raise ValueError(f"non-finite input to regulated_score: raw={raw}, reg={reg}")
    if raw < 0:
        raise ValueError(f"raw score must be non-negative, got {raw}")
    if raw == 0.0:
        return 0.0
    try:
        return raw * base**reg
    except OverflowError:
        return math.inf


def best_match(
    query: Tag,
    candidates: Sequence[tuple[Tag, float]],
    use_regulation: bool = True,
    cfg: MatchConfig = MatchConfig(),
) -> int | None:
    """Index of the best-scoring candidate, lowest index on ties.

    ``candidates`` holds (tag, regulation modifier) pairs.
    """
    metric = SIMILARITY[cfg.metric]
    best, best_score = None, -math.inf
    for i, (tag, reg) in enumerate(candidates):
        score = metric(query, tag)
        if use_regulation:
            score = regulated_score(score, reg, cfg)
        if score > best_score:
            best, best_score = i, score
    return best
