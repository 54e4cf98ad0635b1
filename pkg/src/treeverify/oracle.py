"""Brute-force enumeration of output configurations.

Exponential by design: it is the reference the search and Merge are
checked against on small ensembles. It only shares the box algebra and the
constraint predicates with the rest of the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from .constraints import Constraint, DiffersOnly
from .errors import Infeasible
from .ensemble import Box, Ensemble

DEFAULT_LIMIT = 10**7


class TooManyConfigurations(RuntimeError):
    pass


@dataclass(frozen=True)
class OutputConfig:
    leaves: tuple[tuple[int, int], ...]
    box: Box
    value: float


def enumerate_configs(
    ens: Ensemble,
    constraint: Constraint | None = None,
    prune: Box | None = None,
    limit: int = DEFAULT_LIMIT,
) -> Iterator[OutputConfig]:
    box = prune or Box()
    if constraint is not None:
        cb = constraint.prune_box()
        box = None if cb is None else box.intersect(cb)
        if box is None:
            return
    n = ens.num_attributes
    check = constraint is not None and not constraint.prune_only
    if check and not constraint.accepts_box(box, n):
        return
    trees = ens.trees
    count = 0

    def rec(m: int, box: Box, leaves: tuple, vals: tuple):
        nonlocal count
        if m == len(trees):
            count += 1
            if count > limit:
                raise TooManyConfigurations(f"more than {limit} output configurations")
            yield OutputConfig(leaves, box, math.fsum((ens.base_score, *vals)))
            return
        tree = trees[m]
        for i in range(tree.num_leaves):
            joint = box.intersect(tree.leaf_boxes[i])
            if joint is None:
                continue
            if check and not constraint.accepts_box(joint, n):
                continue
            yield from rec(m + 1, joint, leaves + ((m, i),), vals + (tree.leaf_values[i],))

    yield from rec(0, box, (), ())


def exact_max(ens: Ensemble, constraint: Constraint | None = None, prune: Box | None = None, limit: int = DEFAULT_LIMIT):
    best = None
    for c in enumerate_configs(ens, constraint, prune, limit):
        if best is None or c.value > best.value:
            best = c
    if best is None:
        raise Infeasible("no output configuration satisfies the constraints")
    return best.value, best


def exact_min(ens: Ensemble, constraint: Constraint | None = None, prune: Box | None = None, limit: int = DEFAULT_LIMIT):
    best = None
    for c in enumerate_configs(ens, constraint, prune, limit):
        if best is None or c.value < best.value:
            best = c
    if best is None:
        raise Infeasible("no output configuration satisfies the constraints")
    return best.value, best


def _signed_values(ens: Ensemble, c: OutputConfig, sign: float) -> list[float]:
    return [sign * ens.base_score] + [sign * ens.trees[m].leaf_values[i] for m, i in c.leaves]


def exact_diff_max(
    t1: Ensemble,
    t2: Ensemble,
    joint: DiffersOnly | None = None,
    constraint1: Constraint | None = None,
    constraint2: Constraint | None = None,
    prune1: Box | None = None,
    prune2: Box | None = None,
    limit: int = DEFAULT_LIMIT,
):
    """Max of ``t2(x2) - t1(x1)`` over all pairs of configurations that the joint constraint allows."""
    first = list(enumerate_configs(t1, constraint1, prune1, limit))
    second = list(enumerate_configs(t2, constraint2, prune2, limit))
    if len(first) * len(second) > limit:
        raise TooManyConfigurations(f"{len(first)} x {len(second)} configuration pairs exceed {limit}")
    n = t1.num_attributes
    arrays1 = [c.box.to_arrays(n) for c in first]
    arrays2 = [c.box.to_arrays(n) for c in second]
    best = None
    for c1, (lo1, hi1) in zip(first, arrays1):
        for c2, (lo2, hi2) in zip(second, arrays2):
            if joint is not None and not joint.accepts_pair(lo1, hi1, lo2, hi2):
                continue
            v = math.fsum(_signed_values(t2, c2, 1.0) + _signed_values(t1, c1, -1.0))
            if best is None or v > best[0]:
                best = (v, (c1, c2))
    if best is None:
        raise Infeasible("no pair of configurations satisfies the joint constraint")
    return best
