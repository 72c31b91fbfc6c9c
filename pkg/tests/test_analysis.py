import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagreg import reference
from tagreg.analysis import (
    KNOCKOUTS, MEMORY_RELIANT, NEITHER, PROMOTE, REGULATION_RELIANT, REPRESS, Edge, NotASolution,
    classify_strategy, collect_trace, extract_network, instruction_profile, knockout,
    knockout_report, network_stats, problem_score, regulation_direction, write_trace_csv,
)
from tagreg.genome import CATEGORIES, Limits, instruction_set, random_program
from tagreg.problems import CONTEXTUAL, make_problem
from tagreg.tags import Tag
from tagreg.vm import Hardware
from tagreg.vm.common import REGULATION_CHANGED

OPS = instruction_set(4)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(KNOCKOUTS)))
def test_knockout_idempotent_and_sound(seed, target):
    p = random_program(np.random.default_rng(seed), Limits(width=16), OPS)
    once = knockout(p, target)
    assert knockout(once, target) == once
    assert not {i.op for m in once.modules for i in m.body} & KNOCKOUTS[target]
    # shape, tags and args survive
    assert [len(m.body) for m in once.modules] == [len(m.body) for m in p.modules]
    for a, b in zip(p.modules, once.modules):
        assert a.tag == b.tag
        assert [(i.tag, i.args) for i in a.body] == [(i.tag, i.args) for i in b.body]


def test_unknown_knockout():
    with pytest.raises(ValueError):
        knockout(reference.load("walkthrough"), "everything")


def test_strategies_of_references():
    rep = reference.load("self_repression_k4")
    assert classify_strategy(rep, reference.repeated_config(4)) == REGULATION_RELIANT
    assert regulation_direction(rep, reference.repeated_config(4)) == {"up": False, "down": True}
    mem = reference.load("global_memory_k2")
    assert classify_strategy(mem, reference.repeated_config(2)) == MEMORY_RELIANT
    perms = [list(range(16))]
    hard = reference.load("hardwired_changing")
    assert classify_strategy(hard, reference.changing_config(), permutations=perms) == NEITHER


def test_non_solution_is_rejected():
    with pytest.raises(NotASolution):
        classify_strategy(reference.load("self_repression_k4"), reference.repeated_config(5))


def test_knockout_report_scores():
    rep = knockout_report(reference.load("self_repression_k4"), reference.repeated_config(4))
    assert rep.original == rep.maximum == 4
    assert rep.fitness["regulation_all"] == 1 and rep.fitness["global_memory"] == 4
    score, top = problem_score(reference.load("hardwired_changing"), reference.changing_config(),
                               permutations=[list(range(16))] * 3)
    assert score == top == 48


def test_self_repression_network():
    trace = collect_trace(reference.load("self_repression_k4"), reference.repeated_config(4))
    net = extract_network(trace)
    assert net.edges == tuple(Edge(i, i, REPRESS, 1) for i in range(4))
    assert net.vertices == (0, 1, 2, 3)
    s = network_stats(net)
    assert (s.promote, s.repress, s.self_loops) == (0, 4, 4)


def test_walkthrough_network():
    hw = Hardware(reference.load("walkthrough"), reference.walkthrough_config(), trace=True)
    hw.dispatch_signal(Tag.from_string(reference.WALKTHROUGH_SIGNAL))
    hw.run_until(50)
    net = extract_network(hw.trace)
    assert {(e.src, e.dst, e.sign) for e in net.edges} == {(3, 2, PROMOTE), (2, 2, REPRESS)}
    data = json.loads(net.to_json())
    assert data["vertices"] == list(net.vertices)
    assert "m3 -> m2 [sign=promote" in net.to_dot()


def test_edge_weights_count_changing_events():
    # random programs with plenty of regulation: weights equal the events that moved a modifier
    rng = np.random.default_rng(7)
    cfg = make_problem(CONTEXTUAL, rng, width=16)
    for _ in range(30):
        p = random_program(rng, Limits(width=16), cfg.instruction_set)
        trace = collect_trace(p, cfg)
        moved = [e for e in trace if e.kind == REGULATION_CHANGED and e.new != e.old]
        assert sum(e.weight for e in extract_network(trace).edges) == len(moved)


def test_profile_and_trace_csv(tmp_path):
    trace = collect_trace(reference.load("global_memory_k2"), reference.repeated_config(2))
    prof = instruction_profile(trace)
    assert set(prof.counts) == set(CATEGORIES)
    assert sum(prof.counts.values()) == prof.total
    assert sum(prof.proportions.values()) == pytest.approx(1.0)
    assert prof.flow_control_fraction > 0
    prof.write_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("category,count,proportion\n")
    write_trace_csv(trace, tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == len(trace) + 1
    with pytest.raises(ValueError):
        instruction_profile([])
