import numpy as np
import pytest

from tagreg import reference
from tagreg.genome import Instruction, ModuleDef, Program
from tagreg.problems import (
    CALC_MASK, CALC_OP_NAMES, CALC_OPS, CALC_POSTFIX, CALC_PREFIX, CHANGING, CONTEXT_CASES,
    CONTEXTUAL, REPEATED, CalcTestCase, ProblemConfig, calc_signals, calc_truth,
    check_permutation, contextual_expected, eval_calculator, eval_changing, eval_contextual,
    eval_contextual_all, eval_repeated, gen_calc_cases, generalization_test, make_problem,
    n_signals, read_cases_csv, read_tags_csv, write_cases_csv, write_tags_csv,
)
from tagreg.tags import Tag

ONES = CALC_MASK


def module(tag, *ops):
    return ModuleDef(tag, tuple(Instruction(op, tag, (0, 0, 0)) for op in ops))


def test_contextual_rows():
    table = "ABCD BCDA CDAB DABC".split()
    for i, row in enumerate(table):
        for j, letter in enumerate(row):
            assert contextual_expected(i, j) == "ABCD".index(letter) == (i + j) % 4
    with pytest.raises(ValueError):
        contextual_expected(4, 0)


def test_signal_counts():
    assert [n_signals(k) for k in (REPEATED, CONTEXTUAL, CHANGING, CALC_PREFIX)] == [1, 4, 16, 11]


def test_config_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        make_problem(REPEATED, rng, k=17)
    with pytest.raises(ValueError):
        make_problem("bogus", rng)
    t = Tag(0, 8)
    with pytest.raises(ValueError):
        ProblemConfig(CONTEXTUAL, (t, t, Tag(1, 8), Tag(2, 8)))
    with pytest.raises(ValueError):
        ProblemConfig(CHANGING, (t,))


@pytest.mark.parametrize("op, operands, want", [
    ("ECHO", (7,), 7),
    ("NOT", (0,), ONES),
    ("NAND", (ONES, ONES), 0),
    ("AND", (0b1100, 0b1010), 0b1000),
    ("OR-NOT", (0, ONES), 0),
    ("OR", (0b1100, 0b1010), 0b1110),
    ("AND-NOT", (0b1100, 0b1010), 0b0100),
    ("NOR", (0, 0), ONES),
    ("XOR", (0b1100, 0b1010), 0b0110),
    ("EQUALS", (5, 5), ONES),
])
def test_calc_truth_examples(op, operands, want):
    assert calc_truth(op, operands) == want


def test_calc_truth_rejects_bad_arity():
    with pytest.raises(ValueError):
        calc_truth("NOT", (1, 2))
    with pytest.raises(ValueError):
        calc_truth("NAND", (1,))
    with pytest.raises(ValueError):
        CalcTestCase("AND", (1, 1), 0)


def test_calc_cases_disjoint_and_deterministic():
    train, test = gen_calc_cases(np.random.default_rng(4), 20, 100)
    assert len(train) == 200 and len(test) == 1000
    keys = lambda cs: {(c.operator, c.operands) for c in cs}
    assert not keys(train) & keys(test)
    assert len(keys(train)) == 200
    # edge operands always land in training
    assert ("NOT", (ONES,)) in keys(train) and ("XOR", (0, ONES)) in keys(train)
    again = gen_calc_cases(np.random.default_rng(4), 20, 100)
    assert again == (train, test)


def test_cases_csv_round_trip(tmp_path):
    train, _ = gen_calc_cases(np.random.default_rng(1), 5, 1)
    write_cases_csv(tmp_path / "c.csv", train, CALC_POSTFIX)
    assert read_cases_csv(tmp_path / "c.csv") == train
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "case_id,operator,operand_count,operand0,operand1,expected,notation"


def test_tags_csv_round_trip(tmp_path):
    cfg = make_problem(CALC_PREFIX, np.random.default_rng(2))
    write_tags_csv(tmp_path / "t.csv", cfg)
    assert read_tags_csv(tmp_path / "t.csv") == cfg.signal_tags
    assert "NUMBER" in (tmp_path / "t.csv").read_text()


def test_fixed_response_passes_four_contextual_cases():
    cfg = make_problem(CONTEXTUAL, np.random.default_rng(0))
    p = Program((module(Tag(0, 256), "Response-0"),))
    results = eval_contextual_all(p, cfg)
    assert sum(results) == 4
    assert [c for c, ok in zip(CONTEXT_CASES, results) if ok] == [(0, 0), (1, 3), (2, 2), (3, 1)]


def test_contextual_result_records_both_responses():
    cfg = make_problem(CONTEXTUAL, np.random.default_rng(0))
    p = Program((module(Tag(0, 256), "Response-2"),))
    r = eval_contextual(p, (1, 1), cfg)
    assert r.passed and r.responses == [2, 2]


def test_repeated_references():
    assert eval_repeated(reference.load("self_repression_k4"), reference.repeated_config(4)).passed
    r = eval_repeated(reference.load("self_repression_k4"), reference.repeated_config(4, False))
    assert r.fitness == 1 and not r.passed
    assert eval_repeated(reference.load("global_memory_k2"), reference.repeated_config(2)).passed


def test_changing_requires_permutation():
    with pytest.raises(ValueError):
        check_permutation([0] * 16)
    cfg = reference.changing_config()
    p = reference.load("hardwired_changing")
    perm = list(np.random.default_rng(3).permutation(16))
    r = eval_changing(p, perm, cfg)
    assert r.passed and r.responses == [int(x) for x in perm]


def _echo_program(cfg):
    mods = [module(cfg.signal_tags[i], "Nop") for i in range(len(CALC_OPS))]
    mods.append(module(cfg.numeric_tag, "SubmitResult"))
    return Program(tuple(mods))


def test_calculator_prefix_echo():
    cfg = make_problem(CALC_PREFIX, np.random.default_rng(5))
    p = _echo_program(cfg)
    assert eval_calculator(p, CalcTestCase.make("ECHO", 12345), cfg).passed
    assert not eval_calculator(p, CalcTestCase.make("NOT", 12345), cfg).passed
    signals = calc_signals(CalcTestCase.make("AND", 1, 2), cfg)
    assert signals[0][0] == cfg.signal_tags[CALC_OP_NAMES.index("AND")]
    assert [d for _, d in signals[1:]] == [(1.0,), (2.0,)]


def test_calculator_early_output_fails():
    cfg = make_problem(CALC_POSTFIX, np.random.default_rng(5))
    r = eval_calculator(_echo_program(cfg), CalcTestCase.make("ECHO", 9), cfg)
    assert not r.passed and r.responses == [9.0]


def test_generalization_harness():
    cfg = reference.changing_config()
    assert generalization_test(reference.load("hardwired_changing"), cfg, n_samples=200)
    g = generalization_test(reference.load("cryptic_changing"), cfg, n_samples=5000)
    assert not g and g.failure is not None and g.tested <= 5000
    with pytest.raises(ValueError):
        generalization_test(reference.load("hardwired_changing"), reference.repeated_config(2))


def test_evaluations_are_isolated():
    cfg = reference.repeated_config(2)
    p = reference.load("global_memory_k2")
    assert eval_repeated(p, cfg).responses == eval_repeated(p, cfg).responses == [0, 1]
