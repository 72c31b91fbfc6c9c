import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tagreg.tags import (
    MatchConfig, Tag, TagWidthError, best_match, hamming_similarity, longest_streaks,
    regulated_score, similarity, streak_probability, streak_similarity,
)

T = Tag.from_string


def scan_runs(a: str, b: str) -> tuple[int, int]:
    """Longest agreeing / disagreeing runs by walking the strings."""
    best = {True: 0, False: 0}
    cur, prev = 0, None
    for x, y in zip(a, b):
        same = x == y
        cur = cur + 1 if same == prev else 1
        prev = same
        best[same] = max(best[same], cur)
    return best[True], best[False]


def oracle_streak(a: str, b: str) -> float:
    w = len(a)
    km, kn = scan_runs(a, b)
    pm = min(1.0, (w - km + 2) / 2 ** (km + 1))
    pn = min(1.0, (w - kn + 2) / 2 ** (kn + 1))
    return pn / (pm + pn)


tags16 = st.integers(0, 2**16 - 1).map(lambda v: Tag(v, 16))


def test_streak_examples():
    assert longest_streaks(T("1111"), T("1111")) == (4, 0)
    assert longest_streaks(T("1111"), T("0000")) == (0, 4)
    # indices 0 and 1 agree, 2 and 3 differ
    assert longest_streaks(T("1001"), T("1010")) == (2, 2) == scan_runs("1001", "1010")


def test_streak_identical_vs_complement_w4():
    t = T("1010")
    assert streak_similarity(t, t) == pytest.approx(oracle_streak("1010", "1010"), abs=1e-15)
    assert streak_similarity(t, ~t) == pytest.approx(oracle_streak("1010", "0101"), abs=1e-15)
    assert streak_similarity(t, t) > streak_similarity(t, ~t)


def test_streak_probability_caps_at_one():
    assert streak_probability(256, 0) == 1.0
    assert streak_probability(4, 4) == pytest.approx(2 / 32)


@given(tags16, tags16)
def test_streak_matches_oracle_w16(a, b):
    assert streak_similarity(a, b) == pytest.approx(oracle_streak(a.to_string(), b.to_string()),
                                                    abs=1e-12)


@given(tags16, tags16)
def test_metrics_symmetric_and_bounded(a, b):
    for metric in ("streak", "hamming"):
        s = similarity(a, b, metric)
        assert s == similarity(b, a, metric)
        assert 0.0 <= s <= 1.0


def test_hamming_examples():
    assert hamming_similarity(T("1001"), T("1001")) == 1.0
    assert hamming_similarity(T("1001"), T("0110")) == 0.0
    assert hamming_similarity(T("1001"), T("1011")) == 0.75


def test_width_mismatch_is_an_error():
    with pytest.raises(TagWidthError):
        streak_similarity(T("101"), T("1010"))
    with pytest.raises(TagWidthError):
        hamming_similarity(T("101"), T("1010"))


def test_tag_string_round_trip_and_validation():
    assert T("0011").bits == 3 and T("0011").to_string() == "0011"
    assert T("0000").flip(0) == T("1000")
    with pytest.raises(ValueError):
        T("01x1")
    with pytest.raises(ValueError):
        Tag(16, 4)


def test_random_tags_are_deterministic():
    a = Tag.random(np.random.default_rng(3), 256)
    b = Tag.random(np.random.default_rng(3), 256)
    assert a == b and a.width == 256


def test_regulated_score_examples():
    assert regulated_score(0.6, 0.0) == 0.6
    assert regulated_score(0.5, 1.0) == pytest.approx(0.55, abs=1e-12)
    assert regulated_score(0.5, -1.0) == pytest.approx(0.5 / 1.1, abs=1e-12)
    assert regulated_score(0.0, 50.0) == 0.0
    assert regulated_score(0.5, 1e6) == math.inf


def test_regulated_score_rejects_bad_input():
    with pytest.raises(ValueError):
        regulated_score(-0.1, 0.0)
    with pytest.raises(ValueError):
        regulated_score(0.5, math.nan)
    with pytest.raises(ValueError):
        MatchConfig(reg_base=1.0)


@given(st.floats(0.001, 1.0), st.floats(-50, 50), st.floats(0.01, 5))
def test_regulated_score_increasing_in_modifier(raw, reg, delta):
    assert regulated_score(raw, reg + delta) > regulated_score(raw, reg)


def test_best_match_examples():
    q = T("1001")
    assert best_match(q, [(q, 0.0), (~q, 0.0)]) == 0
    assert best_match(q, []) is None
    cfg = MatchConfig(metric="hamming")
    half = [(T("1010"), 0.0), (T("0101"), 2.0)]
    assert best_match(q, half, cfg=cfg) == 1
    assert best_match(q, half, use_regulation=False, cfg=cfg) == 0


def test_best_match_walkthrough_switch():
    cfg = MatchConfig(metric="hamming")
    caller = T("1001")
    mods = [T("0000"), T("0110"), T("1000"), T("1001")]
    assert best_match(caller, [(m, 0.0) for m in mods], cfg=cfg) == 3
    promoted = [(m, 4.0 if i == 2 else 0.0) for i, m in enumerate(mods)]
    assert best_match(caller, promoted, cfg=cfg) == 2


@given(st.lists(tags16, min_size=1, max_size=8), tags16)
def test_zero_modifiers_equal_unregulated(cands, q):
    pairs = [(c, 0.0) for c in cands]
    assert best_match(q, pairs, True) == best_match(q, pairs, False)


@given(st.lists(tags16, min_size=2, max_size=6), tags16, st.data())
def test_promoting_never_lowers_rank(cands, q, data):
    regs = [data.draw(st.floats(-5, 5)) for _ in cands]
    i = data.draw(st.integers(0, len(cands) - 1))
    winner = best_match(q, list(zip(cands, regs)))
    regs2 = list(regs)
    regs2[i] += 3.0
    new = best_match(q, list(zip(cands, regs2)))
    if winner == i:
        assert new == i
