"""K-partite graph representation of an ensemble and the Merge baseline.

Each tree contributes one independent set holding a vertex per reachable
leaf; edges (implicit) join vertices whose boxes overlap. Merging a group of
sets replaces it by the set of its cliques, which keeps the max-clique /
output-configuration correspondence intact while tightening the
sum-of-maxima upper bound.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

from .errors import Infeasible
from .ensemble import Box, Ensemble
from .search import extract_witness
from .trace import BoundsTrace, Recorder, Status

VERTEX_HEADER_BYTES = 96
INTERVAL_BYTES = 40


class MemoryBudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class Vertex:
    box: Box
    value: float
    origin: frozenset  # of (tree index, leaf_id)
    parts: tuple = ()  # leaf values behind ``value``, kept for correctly rounded sums


@dataclass
class KPartiteGraph:
    sets: list[list[Vertex]]
    base_score: float = 0.0
    num_attributes: int = 0

    def vertex_count(self) -> int:
        return sum(len(s) for s in self.sets)


@dataclass
class MergeConfig:
    L: int = 2
    time_budget: Optional[float] = None
    memory_budget: Optional[int] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("Merge needs L >= 2")


def build_graph(ens: Ensemble, prune: Box | None = None) -> KPartiteGraph:
    prune = prune or Box()
    sets = []
    for m, tree in enumerate(ens.trees):
        vs = []
        for i, (v, b) in enumerate(zip(tree.leaf_values, tree.leaf_boxes)):
            joint = b.intersect(prune)
            if joint is not None:
                vs.append(Vertex(joint, v, frozenset([(m, i)]), (v,)))
        if not vs:
            raise Infeasible(f"no leaf of tree {m} is reachable")
        vs.sort(key=lambda u: -u.value)
        sets.append(vs)
    return KPartiteGraph(sets, ens.base_score, ens.num_attributes)


def merge_upper_bound(g: KPartiteGraph) -> float:
    # sets are kept sorted by descending value
    return math.fsum([g.base_score, *(p for s in g.sets for p in s[0].parts)])


def merge_lower_bound(g: KPartiteGraph) -> float:
    return math.fsum([g.base_score, *(p for s in g.sets for p in s[-1].parts)])


def _vertex_bytes(vs: list[Vertex]) -> int:
    return VERTEX_HEADER_BYTES + INTERVAL_BYTES * max(len(v.box.attrs) for v in vs)


def _merge_group(group: list[list[Vertex]], deadline: float | None) -> list[Vertex]:
    acc = group[0]
    for other in group[1:]:
        out = []
        for u in acc:
            if deadline is not None and time.perf_counter() > deadline:
                raise TimeoutError
            for w in other:
                joint = u.box.intersect(w.box)
                if joint is not None:
                    parts = u.parts + w.parts
                    out.append(Vertex(joint, math.fsum(parts), u.origin | w.origin, parts))
        if not out:
            raise Infeasible("merged set is empty")
        acc = out
    acc.sort(key=lambda u: -u.value)
    return acc


def merge_step(g: KPartiteGraph, cfg: MergeConfig, deadline: float | None = None) -> KPartiteGraph:
    """One round: sets are grouped L at a time from the left and each group is merged.

    A leftover group of one set is carried over unchanged. Raises
    MemoryBudgetExceeded before allocating when the projected size of the
    merged graph exceeds the budget, Infeasible when a merged set is empty,
    TimeoutError when ``deadline`` (a perf_counter value) passes mid-step.
    """
    if len(g.sets) < 2:
        raise ValueError("nothing to merge")
    groups = [g.sets[i : i + cfg.L] for i in range(0, len(g.sets), cfg.L)]
    if cfg.memory_budget is not None:
        projected = 0
        for grp in groups:
            count = math.prod(len(s) for s in grp)
            projected += count * sum(_vertex_bytes(s) for s in grp)
        if projected > cfg.memory_budget:
            raise MemoryBudgetExceeded(f"projected {projected} bytes > budget {cfg.memory_budget}")
    new_sets = [grp[0] if len(grp) == 1 else _merge_group(grp, deadline) for grp in groups]
    return KPartiteGraph(new_sets, g.base_score, g.num_attributes)


def _best_witness(g: KPartiteGraph):
    return extract_witness(g.sets[0][0].box, g.num_attributes)


def run_merge(ens: Ensemble, prune: Box | None = None, cfg: MergeConfig | None = None) -> BoundsTrace:
    cfg = cfg or MergeConfig()
    trace = BoundsTrace()
    rec = Recorder(trace)
    deadline = None if cfg.time_budget is None else rec.start + cfg.time_budget
    try:
        g = build_graph(ens, prune)
    except Infeasible:
        return rec.finish(Status.INFEASIBLE)
    if len(g.sets) == 1:
        best = merge_upper_bound(g)
        rec.update(best, best, _best_witness(g), force=True)
        return rec.finish(Status.EXACT)
    rec.update(merge_upper_bound(g), merge_lower_bound(g), force=True)
    while True:
        if deadline is not None and time.perf_counter() >= deadline:
            return rec.finish(Status.TIMEOUT)
        if cfg.max_steps is not None and trace.steps >= cfg.max_steps:
            return rec.finish(Status.TIMEOUT)
        try:
            g = merge_step(g, cfg, deadline)
        except MemoryBudgetExceeded:
            return rec.finish(Status.MEMORY)
        except TimeoutError:
            return rec.finish(Status.TIMEOUT)
        except Infeasible:
            return rec.finish(Status.INFEASIBLE)
        trace.steps += 1
        if len(g.sets) == 1:
            # every vertex of the last set is a full solution, so the best one is attained
            best = merge_upper_bound(g)
            rec.update(best, best, _best_witness(g), force=True)
            return rec.finish(Status.EXACT)
        rec.update(merge_upper_bound(g), merge_lower_bound(g), force=True)
