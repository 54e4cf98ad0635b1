"""Evaluation drivers: robustness binary search, stress test, random tasks and comparison metrics."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import LinfBall
from .ensemble import Box, Ensemble
from .graph_merge import MergeConfig, run_merge
from .search import Problem, SearchConfig, run_search
from .trace import BoundsTrace, Status

NOT_REACHED = None
DEGENERATE_EPS = 1e-12


def predict_class(models: Sequence[Ensemble], x) -> int:
    """Argmax over one-vs-all scores; ties go to the lowest class index."""
    return int(np.argmax([m.eval(x) for m in models]))


@dataclass
class RobustnessQuery:
    models: Sequence[Ensemble]
    x: Sequence[float]
    source: int
    target: int
    delta_start: float = 20.0
    steps: int = 10
    integer_grid: bool = False

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target labels must differ")
        if not self.delta_start > 0:
            raise ValueError("delta_start must be positive")


@dataclass
class RobustnessResult:
    delta_lower: float
    proven_exact: bool
    adversarial_witness: Optional[np.ndarray]
    witness_delta: Optional[float]
    free_delta: Optional[float]
    per_step: list = field(default_factory=list)


def _integer_point(box: Box, x: np.ndarray) -> np.ndarray | None:
    """The integer point of ``box`` closest to ``x`` per attribute, or None if the box holds none."""
    out = np.array(x, dtype=float)
    for j, (lo, hi) in box.items():
        v = min(max(round(out[j]), math.ceil(lo)), math.ceil(hi) - 1)
        if not lo <= v < hi:
            return None
        out[j] = v
    return out


def robustness_search(
    q: RobustnessQuery,
    cfg: SearchConfig | None = None,
    algorithm: str = "search",
    merge_cfg: MergeConfig | None = None,
) -> RobustnessResult:
    """Binary search on the L-inf radius using upper bounds on ``T_target - T_source``.

    Starting at ``delta_start`` the radius doubles while the bound proves the
    ball free of adversarial examples; once a radius is found where one may
    exist, the search bisects. The returned ``delta_lower`` is the largest
    radius proven free.
    """
    models = list(q.models)
    n = models[q.source].num_attributes
    if any(m.num_attributes != n for m in models):
        raise ValueError("all class models must share num_attributes")
    x = np.asarray(q.x, dtype=float)
    if predict_class(models, x) != q.source:
        raise ValueError(f"x is not classified as {q.source}")
    diff = models[q.target].concat(models[q.source].negate())

    lo, hi = 0.0, None
    delta = q.delta_start
    witness = witness_delta = free_delta = None
    per_step = []
    for _ in range(q.steps):
        ball = LinfBall(x, delta)
        if algorithm == "merge":
            trace = run_merge(diff, ball.prune_box(), merge_cfg)
        else:
            trace = run_search(Problem(diff, constraint=ball), cfg)
        upper = trace.upper
        if upper < 0:
            decision = "free"
            lo = delta
            free_delta = delta if free_delta is None else max(free_delta, delta)
            delta = 2 * delta if hi is None else (lo + hi) / 2
        else:
            decision = "may_exist"
            hi = delta
            found = _adversarial(trace, models, q, x, algorithm, diff)
            if found is not None and (witness_delta is None or delta < witness_delta):
                witness, witness_delta = found, delta
            delta = (lo + hi) / 2
        per_step.append(
            {"delta": ball.radius, "upper": upper, "lower": trace.lower, "status": trace.status.value, "decision": decision}
        )

    proven = bool(
        q.integer_grid
        and witness_delta is not None
        and free_delta is not None
        and math.floor(witness_delta) == math.ceil(free_delta)
    )
    return RobustnessResult(lo, proven, witness, witness_delta, free_delta, per_step)


def _adversarial(trace: BoundsTrace, models, q: RobustnessQuery, x, algorithm, diff) -> np.ndarray | None:
    if algorithm == "merge":
        cands = [] if trace.witness is None else [(None, trace.witness)]
    else:
        cands = [(s.box, s.witness) for s in reversed(trace.solutions) if s.value > 0]
    for box, w in cands:
        if q.integer_grid and box is not None:
            snapped = _integer_point(box, x)
            if snapped is not None:
                w = snapped
        w = np.asarray(w, dtype=float)
        if models[q.target].eval(w) - models[q.source].eval(w) > 0:
            return w
    return None


def stress_max(
    ens: Ensemble, cfg: SearchConfig | None = None, merge_cfg: MergeConfig | None = None
) -> tuple[BoundsTrace, BoundsTrace]:
    """Unconstrained maximum of the ensemble, search and Merge side by side."""
    return run_search(Problem(ens), cfg), run_merge(ens, None, merge_cfg)


class GenerationFailed(RuntimeError):
    pass


@dataclass
class RandomTaskSpec:
    box: Box
    target_fraction: float
    achieved_fraction: float
    seed: int


def reachable_fraction(ens: Ensemble, box: Box) -> float:
    reach = sum(1 for t in ens.trees for b in t.leaf_boxes if b.overlaps(box))
    return reach / ens.num_leaves


def generate_random_task(
    ens: Ensemble, target_fraction: float, seed: int, tolerance: float = 0.05, max_rounds: int = 5000
) -> RandomTaskSpec:
    """Random ``tau_min <= X < tau_max`` constraints leaving about ``target_fraction`` of the leaves reachable.

    Interval ends always sit on split thresholds of the ensemble. Each round
    moves one end of one attribute's interval by one threshold, inwards when
    too many leaves are reachable and outwards when too few.
    """
    if not 0 < target_fraction <= 1:
        raise ValueError("target_fraction must lie in (0, 1]")
    rng = random.Random(seed)
    thresholds = ens.split_thresholds()
    attrs = list(thresholds)
    if not attrs and abs(1.0 - target_fraction) > tolerance:
        raise GenerationFailed("the ensemble has no splits to constrain")
    # per leaf and attribute: does the leaf's interval meet the current one
    n = ens.num_attributes
    boxes = [b.to_arrays(n) for t in ens.trees for b in t.leaf_boxes]
    leaf_lo = np.array([b[0] for b in boxes])
    leaf_hi = np.array([b[1] for b in boxes])
    owner = np.repeat(np.arange(len(ens.trees)), [t.num_leaves for t in ens.trees])
    meets = np.ones_like(leaf_lo, dtype=bool)
    iv: dict[int, tuple[float, float]] = {}
    frac = 1.0
    for _ in range(max_rounds):
        if abs(frac - target_fraction) <= tolerance:
            break
        if frac > target_fraction:
            a = rng.choice(attrs)
            lo, hi = iv.get(a, (-math.inf, math.inf))
            inner = [t for t in thresholds[a] if lo < t < hi]
            if not inner:
                continue
            if rng.random() < 0.5:
                new = (min(inner), hi)
            else:
                new = (lo, max(inner))
        else:
            if not iv:
                break
            a = rng.choice(sorted(iv))
            lo, hi = iv[a]
            if rng.random() < 0.5 and lo != -math.inf:
                below = [t for t in thresholds[a] if t < lo]
                new = (max(below) if below else -math.inf, hi)
            elif hi != math.inf:
                above = [t for t in thresholds[a] if t > hi]
                new = (lo, min(above) if above else math.inf)
            else:
                below = [t for t in thresholds[a] if t < lo]
                new = (max(below) if below else -math.inf, hi)
        col = (leaf_lo[:, a] < new[1]) & (leaf_hi[:, a] > new[0])
        cand = meets.copy()
        cand[:, a] = col
        reach = cand.all(axis=1)
        if not np.bincount(owner, weights=reach, minlength=len(ens.trees)).all():
            continue
        meets = cand
        if new == (-math.inf, math.inf):
            iv.pop(a, None)
        else:
            iv[a] = new
        frac = float(reach.mean())
    if abs(frac - target_fraction) <= tolerance:
        return RandomTaskSpec(Box(iv), target_fraction, frac, seed)
    raise GenerationFailed(
        f"could not reach fraction {target_fraction} (closest {frac:.3f}) within {max_rounds} rounds"
    )


@dataclass
class Metrics:
    ttb: Optional[float]
    gap_ours: Optional[float]
    gap_baseline: Optional[float]
    exact_ours: bool
    exact_baseline: bool
    degenerate: bool = False


def relative_gap(trace: BoundsTrace) -> tuple[Optional[float], bool]:
    """``(upper - lower) / |upper|`` of the final entry and a degenerate flag."""
    if trace.status is Status.INFEASIBLE:
        return None, True
    upper, lower = trace.upper, trace.lower
    if upper == lower:
        return 0.0, abs(upper) < DEGENERATE_EPS
    if lower == -math.inf or upper == math.inf:
        return math.inf, False
    if abs(upper) < DEGENERATE_EPS:
        return math.inf, True
    return (upper - lower) / abs(upper), False


def compute_metrics(ours: BoundsTrace, baseline: BoundsTrace, rel_tol: float = 1e-9) -> Metrics:
    gap_o, deg_o = relative_gap(ours)
    gap_b, deg_b = relative_gap(baseline)
    ttb = NOT_REACHED
    if baseline.entries and ours.entries:
        target = baseline.upper
        slack = rel_tol * max(1.0, abs(target)) if math.isfinite(target) else 0.0
        for e in ours.entries:
            if e.upper <= target + slack:
                ttb = e.t
                break
    return Metrics(
        ttb,
        gap_o,
        gap_b,
        ours.status is Status.EXACT,
        baseline.status is Status.EXACT,
        deg_o or deg_b,
    )
