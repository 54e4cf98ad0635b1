"""Fixtures and independent reference computations shared by the tests."""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from treeverify.ensemble import Ensemble, leaf, split
from treeverify.generators import corpus_member

CORPUS_SIZE = 300
AGE, HEIGHT, BMI = 0, 1, 2


def f1() -> Ensemble:
    return Ensemble([split(0, 2, leaf(1), leaf(3)), split(0, 4, leaf(10), leaf(5))], 1)


def f2() -> Ensemble:
    return Ensemble([split(0, 2, leaf(1), leaf(3)), split(0, 2, leaf(10), leaf(5))], 1)


def health_model() -> Ensemble:
    """Three trees over Age, Height and BMI.

    Leaf ids (depth-first): tree 0 has 0: Age<40, 1: 40<=Age<55, 2: Age>=55.
    Tree 1 has 0: Height<200, 1: Age<50, 2: 50<=Age<55, 3: Age>=55 (the last three with Height>=200).
    Tree 2 has 0: BMI<28, 1: Age<60, 2: Age>=60 (the last two with BMI>=28).
    """
    t0 = split(AGE, 40, leaf(-0.4), split(AGE, 55, leaf(0.3), leaf(0.8)))
    t1 = split(HEIGHT, 200, leaf(0.1), split(AGE, 50, leaf(-0.2), split(AGE, 55, leaf(0.6), leaf(0.9))))
    t2 = split(BMI, 28, leaf(-0.1), split(AGE, 60, leaf(0.4), leaf(0.7)))
    return Ensemble([t0, t1, t2], 3)


@functools.lru_cache(maxsize=None)
def corpus(size: int = CORPUS_SIZE) -> tuple[Ensemble, ...]:
    return tuple(corpus_member(seed) for seed in range(size))


def grid_axes(ens: Ensemble, box=None) -> list[list[float]]:
    """Per attribute, one representative value for every cell cut out by the thresholds (and box ends)."""
    cuts = ens.split_thresholds()
    axes = []
    for j in range(ens.num_attributes):
        pts = set(cuts.get(j, []))
        lo, hi = (-math.inf, math.inf) if box is None else box.interval(j)
        if math.isfinite(lo):
            pts.add(lo)
        base = min(pts) - 1.0 if pts else 0.0
        pts.add(base)
        axes.append(sorted(p for p in pts if lo <= p < hi) or [])
    return axes


def grid_size(axes) -> int:
    return math.prod(len(a) for a in axes)


def grid_points(ens: Ensemble, box=None):
    """Every cell of the threshold grid, represented by its lower corner."""
    return itertools.product(*grid_axes(ens, box))


def grid_extremes(ens: Ensemble, box=None, predicate=None):
    """(max, min) of the ensemble over grid points satisfying ``predicate``; None when none qualify.

    Evaluation only; shares no code with enumeration or search.
    """
    best = worst = None
    for p in grid_points(ens, box):
        if predicate is not None and not predicate(p):
            continue
        v = ens.eval(p)
        best = v if best is None else max(best, v)
        worst = v if worst is None else min(worst, v)
    return best, worst


def interpret_dump_tree(node, x) -> float:
    """Walk one dumped tree the way the learner does: go to "yes" when x < split_condition."""
    while "leaf" not in node:
        k = int(node["split"][1:])
        target = node["yes"] if x[k] < node["split_condition"] else node["no"]
        node = next(c for c in node["children"] if c["nodeid"] == target)
    return node["leaf"]


def interpret_dump(dump, x, base_score: float = 0.0) -> float:
    return base_score + sum(interpret_dump_tree(t, x) for t in dump)


def all_states(space):
    """Exhaustive expansion from the root: yields (parent, children) for every non-goal state."""
    root = space.root()
    if root is None:
        return
    stack = [root]
    while stack:
        s = stack.pop()
        if space.is_goal(s):
            continue
        kids = space.expand(s)
        yield s, kids
        stack.extend(kids)


def goal_states(space):
    root = space.root()
    if root is None:
        return []
    out, stack = [], [root]
    while stack:
        s = stack.pop()
        if space.is_goal(s):
            out.append(s)
        else:
            stack.extend(space.expand(s))
    return out


def rel_close(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def sample_in_box(rng: np.random.Generator, box, n: int) -> np.ndarray:
    """A random point inside ``box``; unbounded sides are capped ten units away."""
    x = np.empty(n)
    for j in range(n):
        lo, hi = box.interval(j)
        a = lo if math.isfinite(lo) else (hi - 10.0 if math.isfinite(hi) else -10.0)
        b = hi if math.isfinite(hi) else a + 20.0
        v = rng.uniform(a, b)
        x[j] = v if lo <= v < hi else a if lo <= a < hi else lo
    return x


def max_cliques(g) -> list[tuple]:
    """Max-cliques of a k-partite graph: one vertex per set, every pair of boxes overlapping.

    Uses pairwise overlap tests only, never a chained box intersection.
    """
    out = []

    def rec(k, chosen):
        if k == len(g.sets):
            out.append(tuple(sorted(o for v in chosen for o in v.origin)))
            return
        for v in g.sets[k]:
            if all(v.box.overlaps(u.box) for u in chosen):
                rec(k + 1, chosen + [v])

    rec(0, [])
    return sorted(out)
