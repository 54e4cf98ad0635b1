import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import AGE, all_states, corpus, f1, f2, goal_states, health_model, rel_close
from treeverify.constraints import BoxConstraint, DiffersOnly, same_instance
from treeverify.ensemble import Box, Ensemble, constant, leaf, split
from treeverify.generators import random_ensemble
from treeverify.graph_merge import build_graph, merge_upper_bound
from treeverify.oracle import enumerate_configs, exact_diff_max, exact_max, exact_min
from treeverify.search import (
    UNAVAILABLE,
    PairProblem,
    Problem,
    SearchConfig,
    SearchSpace,
    Solution,
    TreeOrder,
    extract_witness,
    run_search,
    run_search_two_instance,
    suboptimality_bound,
)
from treeverify.trace import Status

INF = math.inf
EXACT_CFG = SearchConfig(epsilon_start=1.0)


def space_of(ens, constraint=None, order=TreeOrder.IDENTITY):
    return SearchSpace.single(Problem(ens, constraint=constraint), order)


def test_root_expansion_f1():
    sp = space_of(f1())
    kids = sp.expand(sp.root())
    assert sorted((k.leaves, k.g) for k in kids) == [(((0, 0),), 1.0), (((0, 1),), 3.0)]


def test_left_state_has_single_child():
    sp = space_of(f1())
    left = next(k for k in sp.expand(sp.root()) if k.leaves == ((0, 0),))
    assert [k.leaves for k in sp.expand(left)] == [((0, 0), (1, 0))]


def test_heuristic_examples():
    sp = space_of(f1())
    root = sp.root()
    assert root.h == 13 == merge_upper_bound(build_graph(f1()))
    kids = {k.leaves: k for k in sp.expand(root)}
    assert kids[((0, 1),)].h == 10
    assert kids[((0, 0),)].h == 10
    for k in kids.values():
        assert sp.heuristic(k) == k.h


@pytest.mark.parametrize("as_filter", [False, True])
def test_age_above_60_rejects_states(as_filter):
    c = BoxConstraint({AGE: (math.nextafter(60.0, INF), INF)}, as_filter=as_filter)
    sp = space_of(health_model(), c)
    seen = set()
    for parent, kids in all_states(sp):
        seen.add(parent.leaves)
        seen.update(k.leaves for k in kids)
    for banned in [((0, 0),), ((0, 2), (1, 1)), ((0, 2), (1, 0), (2, 1))]:
        assert banned not in seen
    assert ((0, 2), (1, 0), (2, 2)) in seen


def test_run_search_f1_and_f2():
    tr = run_search(Problem(f1()), EXACT_CFG)
    assert tr.status is Status.EXACT and tr.upper == tr.lower == 13
    assert 2 <= tr.witness[0] < 4
    tr = run_search(Problem(f2()))
    assert tr.status is Status.EXACT and tr.upper == tr.lower == 11


def test_infeasible():
    c = BoxConstraint({0: (0, 1)})
    c2 = BoxConstraint({0: (2, 3)})
    from treeverify.constraints import AllOf

    tr = run_search(Problem(f1(), constraint=AllOf([c, c2])))
    assert tr.status is Status.INFEASIBLE
    tr.check()


def test_minimize():
    tr = run_search(Problem(f1(), sense="min"))
    assert tr.status is Status.EXACT and tr.upper == tr.lower == 8
    with pytest.raises(ValueError):
        run_search(Problem(f1(), sense="sideways"))


def test_suboptimality_bound():
    assert suboptimality_bound(Solution(10.0, Box(), None, 0.5)) == 20.0
    assert suboptimality_bound(Solution(10.0, Box(), None, 1.0)) == 10.0
    assert suboptimality_bound(Solution(-1.0, Box(), None, 0.5)) is UNAVAILABLE


def test_two_instance_examples():
    n = 1
    tr = run_search_two_instance(PairProblem(f1(), f1(), joint=same_instance(n)))
    assert tr.status is Status.EXACT and tr.upper == tr.lower == 0
    tr = run_search_two_instance(PairProblem(constant(0.0, n), f1()))
    assert tr.status is Status.EXACT and tr.upper == 13
    tr = run_search_two_instance(PairProblem(f1(), f1(), joint=DiffersOnly([0], n)))
    assert tr.status is Status.EXACT and tr.upper == tr.lower == 5
    x1, x2 = tr.witness
    assert f1().eval(x2) - f1().eval(x1) == 5


def test_extract_witness():
    assert extract_witness(Box({0: (2, 4)}), 1)[0] == 2.0
    assert extract_witness(Box({0: (-INF, 4)}), 1)[0] == 3.0
    assert extract_witness(Box(), 1)[0] == 0.0
    big = extract_witness(Box({0: (-INF, 1e300)}), 1)[0]
    assert big < 1e300


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(epsilon_start=0.0)
    with pytest.raises(ValueError):
        SearchConfig(epsilon_step=0.0)


def test_node_budget_one_gives_root_bound():
    e = random_ensemble(3, 20, 4, 6)
    tr = run_search(Problem(e), SearchConfig(node_budget=1))
    assert tr.status is Status.TIMEOUT
    assert tr.entries[0].upper == merge_upper_bound(build_graph(e))


def test_memory_budget():
    e = random_ensemble(3, 12, 5, 6)
    tr = run_search(Problem(e), SearchConfig(memory_budget=2000))
    assert tr.status is Status.MEMORY
    tr.check()


def test_time_budget_zero():
    tr = run_search(Problem(random_ensemble(3, 12, 5, 6)), SearchConfig(time_budget=0.0))
    assert tr.status is Status.TIMEOUT and len(tr.entries) == 1


def test_goal_states_match_configurations():
    for e in corpus()[:100]:
        states = sorted((s.leaves, s.box, s.g) for s in goal_states(space_of(e)))
        configs = sorted((c.leaves, c.box, c.value) for c in enumerate_configs(e))
        assert [(a, b) for a, b, _ in states] == [(a, b) for a, b, _ in configs]
        for (_, _, g), (_, _, v) in zip(states, configs):
            assert rel_close(g, v, 1e-12)


def subtree_best(space, state, memo=None):
    """Best goal g reachable below ``state`` by exhaustive expansion (-inf if none)."""
    if space.is_goal(state):
        return state.g
    return max((subtree_best(space, k) for k in space.expand(state)), default=-INF)


@given(st.integers(0, 10**6), st.sampled_from(list(TreeOrder)))
@settings(max_examples=40, deadline=None)
def test_admissible_and_consistent(seed, order):
    rng = np.random.default_rng(seed)
    e = random_ensemble(rng, int(rng.integers(2, 6)), int(rng.integers(1, 4)), 3)
    sp = space_of(e, order=order)
    for parent, kids in all_states(sp):
        assert subtree_best(sp, parent) <= parent.g + parent.h + 1e-9
        for k in kids:
            nu = k.g - parent.g
            assert parent.h >= nu + k.h - 1e-9
            assert rel_close(sp.heuristic(k), k.h, 1e-12)


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_two_instance_consistency(seed):
    rng = np.random.default_rng(seed)
    t1 = random_ensemble(rng, int(rng.integers(1, 4)), 2, 3)
    t2 = random_ensemble(rng, int(rng.integers(1, 5)), 2, 3)
    joint = DiffersOnly([int(rng.integers(3))], 3) if rng.random() < 0.7 else None
    sp = SearchSpace.pair(PairProblem(t1, t2, joint=joint))
    for parent, kids in all_states(sp):
        side = sp.next_side(parent)
        for k in kids:
            # side 0 holds the negated first model, so its added value is -nu1
            added = k.gs[side] - parent.gs[side]
            assert parent.h >= added + k.h - 1e-9
    want = exact_diff_max(t1, t2, joint)[0]
    tr = run_search_two_instance(PairProblem(t1, t2, joint=joint), EXACT_CFG)
    assert tr.status is Status.EXACT and rel_close(tr.upper, want)
    x1, x2 = tr.witness
    assert rel_close(t2.eval(x2) - t1.eval(x1), want)
    if joint is not None:
        assert joint.satisfied_pair(x1, x2)


def test_reduction_to_two_instance():
    for e in corpus()[:60]:
        a = run_search(Problem(e), EXACT_CFG)
        b = run_search_two_instance(PairProblem(constant(0.0, e.num_attributes), e), EXACT_CFG)
        assert a.status is b.status is Status.EXACT
        assert rel_close(a.upper, b.upper)


def test_first_goal_is_optimal_without_relaxation():
    for e in corpus()[:100]:
        tr = run_search(Problem(e), EXACT_CFG)
        assert rel_close(tr.solutions[0].value, exact_max(e)[0])


def test_minimum_matches_oracle():
    for e in corpus()[:100]:
        tr = run_search(Problem(e, sense="min"))
        assert tr.status is Status.EXACT
        assert rel_close(tr.lower, exact_min(e)[0]) and rel_close(tr.upper, tr.lower)
        tr.check()


def test_value_spread_order_agrees():
    for e in corpus()[:100]:
        a = run_search(Problem(e), SearchConfig(tree_order=TreeOrder.BY_VALUE_SPREAD))
        assert rel_close(a.upper, exact_max(e)[0])


def test_solutions_carry_exact_witnesses():
    for e in corpus()[:100]:
        tr = run_search(Problem(e), SearchConfig(epsilon_start=0.2))
        for s in tr.solutions:
            assert s.box.contains(s.witness)
            assert e.eval(s.witness) == s.value
        values = [s.value for s in tr.solutions]
        assert values == sorted(values)


def test_base_score_included():
    e = Ensemble([split(0, 1, leaf(1), leaf(2))], 1, base_score=10.0)
    tr = run_search(Problem(e))
    assert tr.upper == tr.lower == 12.0
