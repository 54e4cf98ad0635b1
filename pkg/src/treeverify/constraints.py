"""State-level constraints.

A constraint sees the box of a partial search state as two dense arrays
``lo``/``hi`` (one half-open interval per attribute) and answers whether some
point of that box can still satisfy the example-level predicate. Boxes only
shrink as leaves are added, so every rule below is monotone: once a box is
rejected, all of its sub-boxes are rejected too.

Binary attributes follow the 0.5-threshold convention. Under a box an
attribute is forced true when its interval lies in ``[0.5, inf)``, forced
false when it lies in ``(-inf, 0.5)``, and free otherwise.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ensemble import Box

THRESHOLD = 0.5


class ConstraintError(ValueError):
    pass


def forced_true(lo: float, hi: float) -> bool:
    return lo >= THRESHOLD


def forced_false(lo: float, hi: float) -> bool:
    return hi <= THRESHOLD


def _set_binary(x, j: int, lo: float, hi: float, value: bool) -> None:
    if value:
        x[j] = 1.0 if lo <= 1.0 < hi else max(lo, THRESHOLD)
    else:
        x[j] = 0.0 if lo <= 0.0 < hi else lo


class Constraint:
    """Base class; the defaults accept everything."""

    #: True when the constraint is fully captured by ``prune_box``
    prune_only = False

    def prune_box(self) -> Box | None:
        return Box()

    def accepts(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        return True

    def accepts_box(self, box: Box, num_attributes: int) -> bool:
        return self.accepts(*box.to_arrays(num_attributes))

    def satisfied(self, x: Sequence[float]) -> bool:
        return True

    def complete_witness(self, x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
        """Move free coordinates of ``x`` (already inside the box) so that it satisfies the predicate."""


class BoxConstraint(Constraint):
    """Conjunction of per-attribute conditions ``lo <= X < hi``.

    By default it is applied by pruning the leaves before the search. With
    ``as_filter=True`` it is checked per state instead, which gives the same
    optimum but leaves state boxes unclipped.
    """

    def __init__(self, box: Box | Mapping[int, tuple[float, float]], as_filter: bool = False):
        self.box = box if isinstance(box, Box) else Box(box)
        self.as_filter = as_filter
        self.prune_only = not as_filter

    def prune_box(self) -> Box:
        return Box() if self.as_filter else self.box

    def accepts(self, lo, hi) -> bool:
        if not self.as_filter:
            return True
        for j, (a, b) in self.box.items():
            if max(a, lo[j]) >= min(b, hi[j]):
                return False
        return True

    def satisfied(self, x) -> bool:
        return self.box.contains(x)

    def complete_witness(self, x, lo, hi) -> None:
        if not self.as_filter:
            return
        for j, (a, b) in self.box.items():
            if not a <= x[j] < b:
                lo_j, hi_j = max(a, lo[j]), min(b, hi[j])
                x[j] = lo_j if lo_j != -math.inf else hi_j - 1.0

    def __repr__(self) -> str:
        return f"BoxConstraint({self.box!r}{', as_filter=True' if self.as_filter else ''})"


class LinfBall(Constraint):
    """``max_j |X_j - center_j| < radius`` (open ball)."""

    prune_only = True

    def __init__(self, center: Sequence[float], radius: float):
        if not radius > 0:
            raise ConstraintError("radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def prune_box(self) -> Box:
        # the smallest float above c - r makes the half-open interval exactly the open one
        return Box(
            {j: (math.nextafter(c - self.radius, math.inf), c + self.radius) for j, c in enumerate(self.center)}
        )

    def satisfied(self, x) -> bool:
        # compare against the rounded ends so this agrees with prune_box to the last ulp
        x = np.asarray(x, dtype=float)
        return bool(np.all((x > self.center - self.radius) & (x < self.center + self.radius)))

    def __repr__(self) -> str:
        return f"LinfBall(radius={self.radius}, dims={len(self.center)})"


class AtMostK(Constraint):
    """At most ``k`` of the binary attributes in ``attrs`` may be switched on.

    Attributes already on in ``baseline`` are not counted.
    """

    def __init__(self, attrs: Iterable[int], k: int, baseline: Sequence[float] | None = None):
        if k < 0:
            raise ConstraintError("k must be non-negative")
        attrs = sorted(set(int(a) for a in attrs))
        if baseline is not None:
            attrs = [a for a in attrs if baseline[a] < THRESHOLD]
        self.attrs = attrs
        self.k = int(k)
        self.baseline = None if baseline is None else list(baseline)

    def count_forced(self, lo, hi) -> int:
        return sum(1 for j in self.attrs if lo[j] >= THRESHOLD)

    def accepts(self, lo, hi) -> bool:
        return self.count_forced(lo, hi) <= self.k

    def satisfied(self, x) -> bool:
        return sum(1 for j in self.attrs if x[j] >= THRESHOLD) <= self.k

    def complete_witness(self, x, lo, hi) -> None:
        for j in self.attrs:
            if not forced_true(lo[j], hi[j]):
                _set_binary(x, j, lo[j], hi[j], False)

    def __repr__(self) -> str:
        return f"AtMostK(k={self.k}, attrs={self.attrs})"


class OneOutOfK(Constraint):
    """Each group of binary attributes is one-hot: exactly one member is on."""

    def __init__(self, groups: Iterable[Iterable[int]]):
        self.groups = [sorted(set(int(a) for a in g)) for g in groups]
        seen: set[int] = set()
        for g in self.groups:
            if not g:
                raise ConstraintError("empty one-hot group")
            if seen & set(g):
                raise ConstraintError("one-hot groups must be disjoint")
            seen |= set(g)

    def accepts(self, lo, hi) -> bool:
        for g in self.groups:
            on = off = 0
            for j in g:
                if lo[j] >= THRESHOLD:
                    on += 1
                elif hi[j] <= THRESHOLD:
                    off += 1
            if on > 1 or off == len(g):
                return False
        return True

    def satisfied(self, x) -> bool:
        return all(sum(1 for j in g if x[j] >= THRESHOLD) == 1 for g in self.groups)

    def complete_witness(self, x, lo, hi) -> None:
        for g in self.groups:
            chosen = next((j for j in g if forced_true(lo[j], hi[j])), None)
            if chosen is None:
                chosen = next((j for j in g if not forced_false(lo[j], hi[j])), None)
            for j in g:
                if not forced_true(lo[j], hi[j]) and not forced_false(lo[j], hi[j]):
                    _set_binary(x, j, lo[j], hi[j], j == chosen)

    def __repr__(self) -> str:
        return f"OneOutOfK({self.groups})"


class AllOf(Constraint):
    def __init__(self, parts: Iterable[Constraint]):
        self.parts = list(parts)
        self.prune_only = all(p.prune_only for p in self.parts)

    def prune_box(self) -> Box | None:
        box = Box()
        for p in self.parts:
            pb = p.prune_box()
            box = None if pb is None else box.intersect(pb)
            if box is None:
                return None
        return box

    def accepts(self, lo, hi) -> bool:
        return all(p.prune_only or p.accepts(lo, hi) for p in self.parts)

    def satisfied(self, x) -> bool:
        return all(p.satisfied(x) for p in self.parts)

    def complete_witness(self, x, lo, hi) -> None:
        for p in self.parts:
            p.complete_witness(x, lo, hi)

    def __repr__(self) -> str:
        return f"AllOf({self.parts})"


class DiffersOnly:
    """Pair constraint: the two examples agree on every attribute outside ``attrs``.

    With an empty ``attrs`` the two examples must coincide.
    """

    def __init__(self, attrs: Iterable[int], num_attributes: int):
        self.attrs = sorted(set(int(a) for a in attrs))
        self.num_attributes = int(num_attributes)
        self.shared = np.ones(self.num_attributes, dtype=bool)
        self.shared[self.attrs] = False

    def accepts_pair(self, lo1, hi1, lo2, hi2) -> bool:
        s = self.shared
        return bool(np.all(np.maximum(lo1[s], lo2[s]) < np.minimum(hi1[s], hi2[s])))

    def satisfied_pair(self, x1, x2) -> bool:
        x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
        return bool(np.all(x1[self.shared] == x2[self.shared]))

    def complete_witness_pair(self, x1, x2, lo1, hi1, lo2, hi2) -> None:
        for j in np.flatnonzero(self.shared):
            lo, hi = max(lo1[j], lo2[j]), min(hi1[j], hi2[j])
            v = lo if lo != -math.inf else (hi - 1.0 if hi != math.inf else 0.0)
            x1[j] = x2[j] = v

    def __repr__(self) -> str:
        return f"DiffersOnly({self.attrs})"


def same_instance(num_attributes: int) -> DiffersOnly:
    return DiffersOnly((), num_attributes)


def accepts(c: Constraint, state) -> bool:
    """Check a single-instance search state against ``c``."""
    return c.accepts(state.lo, state.hi)


def prune_box(c: Constraint) -> Box | None:
    return c.prune_box()


def _interval(pair) -> tuple[float, float]:
    lo, hi = pair
    return (-math.inf if lo is None else float(lo), math.inf if hi is None else float(hi))


def from_dict(doc: Mapping, num_attributes: int):
    """Build a constraint from its task-file form.

    ``differs_only`` yields a pair constraint; every other kind a single-instance one.
    """
    kind = doc.get("kind")
    try:
        if kind == "box":
            box = Box({int(a): _interval(iv) for a, iv in doc["intervals"].items()})
            return BoxConstraint(box, as_filter=bool(doc.get("as_filter", False)))
        if kind == "linf_ball":
            center = doc["center"]
            if len(center) != num_attributes:
                raise ConstraintError(f"linf_ball center has {len(center)} values, expected {num_attributes}")
            return LinfBall(center, doc["radius"])
        if kind == "at_most_k":
            return AtMostK(doc["attrs"], doc["k"], doc.get("baseline"))
        if kind == "one_out_of_k":
            return OneOutOfK(doc["groups"])
        if kind == "differs_only":
            return DiffersOnly(doc.get("attrs", []), num_attributes)
        if kind == "all_of":
            return AllOf(from_dict(p, num_attributes) for p in doc["parts"])
    except KeyError as e:
        raise ConstraintError(f"constraint of kind {kind!r} is missing field {e.args[0]!r}") from None
    raise ConstraintError(f"unknown constraint kind {kind!r}")
