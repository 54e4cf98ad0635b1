"""Seeded random ensembles for tests, benchmarks and demos."""

from __future__ import annotations

import numpy as np

from .ensemble import Ensemble, Leaf, Node, Split


def random_tree(
    rng: np.random.Generator,
    depth: int,
    num_attributes: int,
    *,
    split_prob: float = 1.0,
    value_range: tuple[float, float] = (-1.0, 1.0),
    domain: tuple[float, float] = (0.0, 10.0),
    integer_thresholds: bool = False,
) -> Node:
    """Random tree of at most ``depth`` levels whose thresholds stay inside the path's interval."""

    def grow(d: int, bounds: dict[int, tuple[float, float]]) -> Node:
        if d == depth or (d > 0 and rng.random() > split_prob):
            return Leaf(float(rng.uniform(*value_range)))
        for _ in range(10):
            a = int(rng.integers(num_attributes))
            lo, hi = bounds.get(a, domain)
            if integer_thresholds:
                cands = np.arange(np.floor(lo) + 1, np.ceil(hi))
                cands = cands[(cands > lo) & (cands < hi)]
                if len(cands) == 0:
                    continue
                tau = float(rng.choice(cands))
            else:
                if hi - lo < 1e-6:
                    continue
                tau = float(rng.uniform(lo, hi))
                if not lo < tau < hi:
                    continue
            left = dict(bounds)
            left[a] = (lo, tau)
            right = dict(bounds)
            right[a] = (tau, hi)
            return Split(a, tau, grow(d + 1, left), grow(d + 1, right))
        return Leaf(float(rng.uniform(*value_range)))

    return grow(0, {})


def random_ensemble(
    seed_or_rng,
    num_trees: int,
    depth: int,
    num_attributes: int,
    **kwargs,
) -> Ensemble:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    return Ensemble([random_tree(rng, depth, num_attributes, **kwargs) for _ in range(num_trees)], num_attributes)


def corpus_member(seed: int) -> Ensemble:
    """Small ensemble used by the exactness checks: 2-6 trees, depth 2-4, 2-6 attributes, U(-1, 1) leaves."""
    rng = np.random.default_rng(seed)
    num_trees = int(rng.integers(2, 7))
    depth = int(rng.integers(2, 5))
    num_attributes = int(rng.integers(2, 7))
    return random_ensemble(rng, num_trees, depth, num_attributes, split_prob=0.8)
