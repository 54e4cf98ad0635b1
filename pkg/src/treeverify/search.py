"""Anytime best-first search over partial output configurations.

A state fixes one leaf for each of the first ``depth`` trees (in a fixed tree
order) such that the chosen leaves still share a non-empty box. Its value so
far ``g`` is the sum of the chosen leaf values and ``h`` sums, over every tree
not yet fixed, the largest leaf value still compatible with the state's box.
``h`` never underestimates, so ``g + h`` of the best open state bounds the
optimum from above at any moment.

States are popped by the relaxed priority ``g + eps * h``. With ``eps < 1``
full solutions surface early and give lower bounds; ``eps`` is raised after
every solution and the open list is re-keyed in place. A state whose ``g`` is
negative is keyed by ``eps * (g + h)`` instead: that keeps every relaxed key
at least ``eps`` times the unrelaxed one, which is what makes a positive
solution value ``v`` found at ``eps`` certify ``optimum <= v / eps``.

Two-instance problems (maximize ``T2(x2) - T1(x1)``) run the same machinery
over two "sides": side one is the negated first model, so its maximizing
heuristic is minus the minimizing heuristic of ``T1``. Sides are expanded
alternately.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import Constraint, DiffersOnly
from .ensemble import Box, Ensemble
from .trace import BoundsTrace, Recorder, Status

STATE_OVERHEAD_BYTES = 400
UNAVAILABLE = None


class TreeOrder(str, enum.Enum):
    IDENTITY = "identity"
    BY_VALUE_SPREAD = "by_value_spread"


@dataclass
class SearchConfig:
    epsilon_start: float = 0.5
    epsilon_step: float = 0.1
    time_budget: Optional[float] = None
    node_budget: Optional[int] = None
    memory_budget: Optional[int] = None
    tree_order: TreeOrder = TreeOrder.IDENTITY

    def __post_init__(self):
        if not 0 < self.epsilon_start <= 1:
            raise ValueError("epsilon_start must lie in (0, 1]")
        if not self.epsilon_step > 0:
            raise ValueError("epsilon_step must be positive")
        self.tree_order = TreeOrder(self.tree_order)


@dataclass
class Problem:
    """Maximize (or minimize) one ensemble over the examples that satisfy ``constraint``."""

    ensemble: Ensemble
    prune: Optional[Box] = None
    constraint: Optional[Constraint] = None
    sense: str = "max"


@dataclass
class PairProblem:
    """Maximize ``t2(x2) - t1(x1)`` subject to per-instance and joint constraints."""

    t1: Ensemble
    t2: Ensemble
    prune1: Optional[Box] = None
    prune2: Optional[Box] = None
    constraint1: Optional[Constraint] = None
    constraint2: Optional[Constraint] = None
    joint: Optional[DiffersOnly] = None


@dataclass
class Solution:
    value: float
    box: object  # Box, or a (Box, Box) pair for two-instance problems
    witness: object  # example, or an (x1, x2) pair
    epsilon_at_discovery: float
    leaves: tuple = ()


def suboptimality_bound(solution: Solution):
    """Upper bound ``value / eps`` on the optimum; UNAVAILABLE unless the value is positive."""
    if not solution.value > 0:
        return UNAVAILABLE
    return solution.value / solution.epsilon_at_discovery


def extract_witness_arrays(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    x = np.where(np.isfinite(hi), hi - 1.0, 0.0)
    # hi - 1 rounds back to hi for huge magnitudes
    bad = np.isfinite(hi) & (x >= hi)
    if bad.any():
        x[bad] = np.nextafter(hi[bad], -np.inf)
    return np.where(np.isfinite(lo), lo, x)


def extract_witness(box: Box, num_attributes: int) -> np.ndarray:
    """A concrete example inside ``box``: the lower end where finite, else ``hi - 1``, else 0."""
    return extract_witness_arrays(*box.to_arrays(num_attributes))


def _combine_prune(prune: Box | None, constraint: Constraint | None) -> Box | None:
    box = prune or Box()
    if constraint is not None:
        cb = constraint.prune_box()
        box = None if cb is None else box.intersect(cb)
    return box


class _Side:
    """One model compiled against its prune box into flat leaf arrays.

    Leaves are grouped per tree position (expansion order) and sorted by
    descending value inside each group.
    """

    def __init__(self, ens: Ensemble, prune: Box | None, constraint: Constraint | None, sign: float, order: TreeOrder):
        self.ens = ens
        self.sign = sign
        self.constraint = constraint
        self.check_constraint = constraint is not None and not constraint.prune_only
        self.num_attributes = n = ens.num_attributes
        self.prune = _combine_prune(prune, constraint)
        self.feasible = self.prune is not None
        if not self.feasible:
            return
        plo, phi = self.prune.to_arrays(n)
        self.root_lo, self.root_hi = plo, phi

        per_tree = []
        for m, tree in enumerate(ens.trees):
            entries = []
            for i, (v, b) in enumerate(zip(tree.leaf_values, tree.leaf_boxes)):
                lo, hi = b.to_arrays(n)
                lo = np.maximum(lo, plo)
                hi = np.minimum(hi, phi)
                if np.all(lo < hi):
                    entries.append((sign * v, i, lo, hi))
            if not entries:
                self.feasible = False
                return
            entries.sort(key=lambda e: (-e[0], e[1]))
            per_tree.append((m, entries))

        if order is TreeOrder.BY_VALUE_SPREAD:
            per_tree.sort(key=lambda te: -(te[1][0][0] - te[1][-1][0]))
        self.order = [m for m, _ in per_tree]
        self.M = len(per_tree)
        offsets = [0]
        vals, leaf_ids, los, his = [], [], [], []
        for _, entries in per_tree:
            for v, i, lo, hi in entries:
                vals.append(v)
                leaf_ids.append(i)
                los.append(lo)
                his.append(hi)
            offsets.append(len(vals))
        self.offsets = np.array(offsets)
        self.starts = self.offsets[:-1]
        self.VAL = np.array(vals, dtype=float)
        self.LEAF = np.array(leaf_ids)
        self.LO = np.array(los, dtype=float).reshape(len(vals), n)
        self.HI = np.array(his, dtype=float).reshape(len(vals), n)
        self.LO_T = np.ascontiguousarray(self.LO.T)
        self.HI_T = np.ascontiguousarray(self.HI.T)
        self.N = len(vals)

    def h_terms(self, mask: np.ndarray, depth: int) -> np.ndarray:
        """Largest compatible leaf value of every tree from position ``depth`` on."""
        if depth >= self.M:
            return np.empty(0)
        per = np.maximum.reduceat(np.where(mask, self.VAL, -np.inf), self.starts)
        return per[depth:]

    def h_from_mask(self, mask: np.ndarray, depth: int) -> float:
        return math.fsum(self.h_terms(mask, depth))

    def h_from_box(self, lo: np.ndarray, hi: np.ndarray, depth: int) -> float:
        """Recompute the heuristic directly from a box, without the cached mask."""
        terms = []
        for p in range(depth, self.M):
            a, b = self.offsets[p], self.offsets[p + 1]
            ok = np.all((self.LO[a:b] < hi) & (lo < self.HI[a:b]), axis=1)
            if not ok.any():
                return -math.inf
            terms.append(float(self.VAL[a:b][ok].max()))
        return math.fsum(terms)

    def state_bytes(self) -> int:
        return 16 * self.num_attributes + self.N


class SearchState:
    """Per side: path of (tree index, leaf_id), box arrays, compatibility mask, chosen values and h terms.

    Sums are correctly rounded (``math.fsum``), so ``ub``, the upper bound
    including the base score, never rounds below the value of a solution
    reachable from the state.
    """

    __slots__ = ("paths", "los", "his", "masks", "vals", "hterms", "gs", "hs", "g", "h", "ub", "depth", "closed")

    def __init__(self, paths, los, his, masks, vals, hterms, base: float = 0.0):
        self.paths = paths
        self.los = los
        self.his = his
        self.masks = masks
        self.vals = vals
        self.hterms = hterms
        self.gs = tuple(math.fsum(v) for v in vals)
        self.hs = tuple(math.fsum(t) for t in hterms)
        flat = [v for side in vals for v in side]
        terms = [float(t) for side in hterms for t in side]
        self.g = math.fsum(flat)
        self.h = math.fsum(terms)
        self.ub = math.fsum([base, *flat, *terms])
        self.depth = sum(len(p) for p in paths)
        self.closed = False

    @property
    def leaves(self):
        return self.paths[0] if len(self.paths) == 1 else self.paths

    @property
    def lo(self):
        return self.los[0]

    @property
    def hi(self):
        return self.his[0]

    @property
    def box(self) -> Box:
        return Box.from_arrays(self.los[0], self.his[0])

    def boxes(self) -> tuple[Box, ...]:
        return tuple(Box.from_arrays(lo, hi) for lo, hi in zip(self.los, self.his))

    def f(self, eps: float = 1.0) -> float:
        return self.g + eps * self.h

    def relaxed_f(self, eps: float) -> float:
        g = self.g
        return (g if g >= 0 else eps * g) + eps * self.h

    def __repr__(self) -> str:
        return f"SearchState(leaves={self.leaves}, g={self.g}, h={self.h})"


class SearchSpace:
    """Expansion and heuristic for one- or two-sided problems."""

    def __init__(self, sides: Sequence[_Side], joint: DiffersOnly | None = None):
        self.sides = list(sides)
        self.joint = joint
        self.feasible = all(s.feasible for s in self.sides)

    @classmethod
    def single(cls, problem: Problem, order: TreeOrder = TreeOrder.IDENTITY) -> "SearchSpace":
        return cls([_Side(problem.ensemble, problem.prune, problem.constraint, 1.0, order)])

    @classmethod
    def pair(cls, problem: PairProblem, order: TreeOrder = TreeOrder.IDENTITY) -> "SearchSpace":
        if problem.t1.num_attributes != problem.t2.num_attributes:
            raise ValueError("both models must share the attribute space")
        return cls(
            [
                _Side(problem.t1, problem.prune1, problem.constraint1, -1.0, order),
                _Side(problem.t2, problem.prune2, problem.constraint2, 1.0, order),
            ],
            problem.joint,
        )

    def _accepts(self, k: int, los, his) -> bool:
        side = self.sides[k]
        if side.check_constraint and not side.constraint.accepts(los[k], his[k]):
            return False
        if self.joint is not None and not self.joint.accepts_pair(los[0], his[0], los[1], his[1]):
            return False
        return True

    def root(self) -> SearchState | None:
        if not self.feasible:
            return None
        los = tuple(s.root_lo for s in self.sides)
        his = tuple(s.root_hi for s in self.sides)
        for k in range(len(self.sides)):
            if not self._accepts(k, los, his):
                return None
        masks = tuple(np.ones(s.N, dtype=bool) for s in self.sides)
        hterms = tuple(s.h_terms(m, 0) for s, m in zip(self.sides, masks))
        empty = tuple(() for _ in self.sides)
        return SearchState(empty, los, his, masks, empty, hterms, self.base_score())

    def next_side(self, state: SearchState) -> int | None:
        best = None
        for k, s in enumerate(self.sides):
            d = len(state.paths[k])
            if d < s.M and (best is None or d < len(state.paths[best])):
                best = k
        return best

    def is_goal(self, state: SearchState) -> bool:
        return self.next_side(state) is None

    def expand(self, state: SearchState) -> list[SearchState]:
        k = self.next_side(state)
        if k is None:
            return []
        side = self.sides[k]
        p = len(state.paths[k])
        lo, hi, mask = state.los[k], state.his[k], state.masks[k]
        a, b = side.offsets[p], side.offsets[p + 1]
        rest = slice(b, side.N)
        base = self.base_score()
        children = []
        for j in range(a, b):
            if not mask[j]:
                continue
            lo_t = np.maximum(lo, side.LO[j])
            hi_t = np.minimum(hi, side.HI[j])
            los = state.los[:k] + (lo_t,) + state.los[k + 1 :]
            his = state.his[:k] + (hi_t,) + state.his[k + 1 :]
            if not self._accepts(k, los, his):
                continue
            m2 = mask.copy()
            m2[a:b] = False
            changed = np.flatnonzero((lo_t != lo) | (hi_t != hi))
            if len(changed) and b < side.N:
                ok = np.all(
                    (side.LO_T[changed, rest] < hi_t[changed, None]) & (lo_t[changed, None] < side.HI_T[changed, rest]),
                    axis=0,
                )
                m2[rest] &= ok
            terms = side.h_terms(m2, p + 1)
            if len(terms) and terms.min() == -math.inf:
                continue
            path = state.paths[k] + ((side.order[p], int(side.LEAF[j])),)
            children.append(
                SearchState(
                    state.paths[:k] + (path,) + state.paths[k + 1 :],
                    los,
                    his,
                    state.masks[:k] + (m2,) + state.masks[k + 1 :],
                    state.vals[:k] + (state.vals[k] + (float(side.VAL[j]),),) + state.vals[k + 1 :],
                    state.hterms[:k] + (terms,) + state.hterms[k + 1 :],
                    base,
                )
            )
        return children

    def heuristic(self, state: SearchState) -> float:
        """Heuristic recomputed from the state boxes (-inf for a dead state)."""
        return sum(s.h_from_box(lo, hi, len(path)) for s, lo, hi, path in zip(self.sides, state.los, state.his, state.paths))

    def base_score(self) -> float:
        return math.fsum(s.sign * s.ens.base_score for s in self.sides)

    def state_bytes(self) -> int:
        return STATE_OVERHEAD_BYTES + sum(s.state_bytes() for s in self.sides)

    def make_solution(self, state: SearchState, eps: float) -> Solution:
        xs = [extract_witness_arrays(lo, hi) for lo, hi in zip(state.los, state.his)]
        for s, x, lo, hi in zip(self.sides, xs, state.los, state.his):
            if s.constraint is not None:
                s.constraint.complete_witness(x, lo, hi)
        if self.joint is not None:
            self.joint.complete_witness_pair(xs[0], xs[1], state.los[0], state.his[0], state.los[1], state.his[1])
        # the witness reaches exactly the chosen leaves, so this equals the model output there
        value = math.fsum([self.base_score(), *(v for side in state.vals for v in side)])
        boxes = state.boxes()
        if len(self.sides) == 1:
            return Solution(value, boxes[0], xs[0], eps, state.paths[0])
        return Solution(value, boxes, tuple(xs), eps, state.paths)


class _Open:
    """OPEN list keyed by the relaxed f, with a shadow heap on the unrelaxed f for the upper bound."""

    def __init__(self):
        self.heap: list = []
        self.bound_heap: list = []
        self.seq = itertools.count()
        self.alive = 0

    def push(self, s: SearchState, eps: float) -> None:
        n = next(self.seq)
        heapq.heappush(self.heap, (-s.relaxed_f(eps), -s.depth, n, s))
        heapq.heappush(self.bound_heap, (-s.ub, n, s))
        self.alive += 1

    def pop(self) -> SearchState:
        s = heapq.heappop(self.heap)[3]
        s.closed = True
        self.alive -= 1
        return s

    def max_f(self) -> float:
        bh = self.bound_heap
        while bh and bh[0][2].closed:
            heapq.heappop(bh)
        return -bh[0][0] if bh else -math.inf

    def rekey(self, eps: float) -> None:
        self.heap = [(-s.relaxed_f(eps), negd, n, s) for _, negd, n, s in self.heap]
        heapq.heapify(self.heap)

    def __len__(self) -> int:
        return self.alive


def _search(space: SearchSpace, cfg: SearchConfig) -> BoundsTrace:
    trace = BoundsTrace()
    rec = Recorder(trace)
    root = space.root()
    if root is None:
        return rec.finish(Status.INFEASIBLE)

    deadline = None if cfg.time_budget is None else rec.start + cfg.time_budget
    state_bytes = space.state_bytes()
    eps = cfg.epsilon_start
    open_ = _Open()
    open_.push(root, eps)
    lower = -math.inf
    expansions = 0
    rec.update(root.ub, -math.inf, force=True)

    while True:
        if len(open_) == 0:
            return rec.finish(Status.EXACT if lower > -math.inf else Status.INFEASIBLE)
        if deadline is not None and time.perf_counter() >= deadline:
            return rec.finish(Status.TIMEOUT)
        if cfg.node_budget is not None and expansions >= cfg.node_budget:
            return rec.finish(Status.TIMEOUT)
        if cfg.memory_budget is not None and len(open_) * state_bytes > cfg.memory_budget:
            return rec.finish(Status.MEMORY)

        state = open_.pop()
        witness = None
        if space.is_goal(state):
            if state.ub > lower:
                lower = state.ub
                sol = space.make_solution(state, eps)
                trace.solutions.append(sol)
                witness = sol.witness
            if eps < 1.0:
                eps = min(1.0, eps + cfg.epsilon_step)
                open_.rekey(eps)
        else:
            expansions += 1
            for child in space.expand(state):
                open_.push(child, eps)
        trace.steps = expansions

        top = open_.max_f()
        rec.update(max(top, lower), lower, witness)
        if lower > -math.inf and lower >= top:
            return rec.finish(Status.EXACT)


def _flip(trace: BoundsTrace) -> BoundsTrace:
    """Map a trace of max(-T) to a trace of min(T)."""
    from .trace import TraceEntry

    entries = [TraceEntry(e.t, -e.lower, -e.upper, e.witness) for e in trace.entries]
    sols = [
        Solution(-s.value, s.box, s.witness, s.epsilon_at_discovery, s.leaves) for s in trace.solutions
    ]
    return BoundsTrace(entries, trace.status, sols, trace.steps)


def run_search(problem: Problem, cfg: SearchConfig | None = None) -> BoundsTrace:
    cfg = cfg or SearchConfig()
    if problem.sense not in ("max", "min"):
        raise ValueError(f"unknown sense {problem.sense!r}")
    if problem.sense == "min":
        flipped = Problem(problem.ensemble.negate(), problem.prune, problem.constraint, "max")
        return _flip(_search(SearchSpace.single(flipped, cfg.tree_order), cfg))
    return _search(SearchSpace.single(problem, cfg.tree_order), cfg)


def run_search_two_instance(problem: PairProblem, cfg: SearchConfig | None = None) -> BoundsTrace:
    cfg = cfg or SearchConfig()
    return _search(SearchSpace.pair(problem, cfg.tree_order), cfg)
