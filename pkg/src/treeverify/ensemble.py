"""Additive ensembles of binary trees, evaluation and box algebra.

Splits are strict less-than tests ``x[attr] < tau``: the left child takes the
points below the threshold, the right child everything else. All intervals are
half-open ``[lo, hi)`` so sibling leaves never share a point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence, Union

import numpy as np

INF = math.inf


class Interval(NamedTuple):
    """Half-open interval ``[lo, hi)``; ``lo`` may be -inf, ``hi`` may be +inf."""

    lo: float
    hi: float

    def contains(self, v: float) -> bool:
        return self.lo <= v < self.hi

    def overlaps(self, other: "Interval") -> bool:
        return max(self.lo, other.lo) < min(self.hi, other.hi)


UNBOUNDED = Interval(-INF, INF)


class Box:
    """Axis-aligned box stored sparsely: attributes that are absent are unconstrained."""

    __slots__ = ("_iv",)

    def __init__(self, intervals: Mapping[int, tuple[float, float]] | None = None):
        iv: dict[int, Interval] = {}
        for attr, (lo, hi) in (intervals or {}).items():
            attr = int(attr)
            if attr < 0:
                raise ValueError(f"negative attribute index {attr}")
            lo, hi = float(lo), float(hi)
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}) for attribute {attr}")
            if lo == -INF and hi == INF:
                continue
            iv[attr] = Interval(lo, hi)
        self._iv = iv

    @classmethod
    def _trusted(cls, iv: dict[int, Interval]) -> "Box":
        box = cls.__new__(cls)
        box._iv = iv
        return box

    @classmethod
    def from_arrays(cls, lo: Sequence[float], hi: Sequence[float]) -> "Box":
        return cls({j: (lo[j], hi[j]) for j in range(len(lo)) if lo[j] != -INF or hi[j] != INF})

    def to_arrays(self, num_attributes: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(num_attributes, -INF)
        hi = np.full(num_attributes, INF)
        for attr, (a, b) in self._iv.items():
            if attr >= num_attributes:
                raise ValueError(f"box constrains attribute {attr} >= {num_attributes}")
            lo[attr], hi[attr] = a, b
        return lo, hi

    def interval(self, attr: int) -> Interval:
        return self._iv.get(attr, UNBOUNDED)

    def items(self):
        return self._iv.items()

    @property
    def attrs(self) -> frozenset[int]:
        return frozenset(self._iv)

    def is_unconstrained(self) -> bool:
        return not self._iv

    def intersect(self, other: "Box") -> "Box | None":
        """Intersection of two boxes, or ``None`` when it is empty."""
        a, b = self._iv, other._iv
        if len(a) < len(b):
            a, b = b, a
        out = dict(a)
        for attr, (lo, hi) in b.items():
            cur = out.get(attr)
            if cur is not None:
                lo = max(lo, cur.lo)
                hi = min(hi, cur.hi)
                if lo >= hi:
                    return None
            out[attr] = Interval(lo, hi)
        return Box._trusted(out)

    def overlaps(self, other: "Box") -> bool:
        a, b = self._iv, other._iv
        if len(a) < len(b):
            a, b = b, a
        for attr, (lo, hi) in b.items():
            cur = a.get(attr)
            if cur is not None and max(lo, cur.lo) >= min(hi, cur.hi):
                return False
        return True

    def contains(self, x: Sequence[float]) -> bool:
        return all(lo <= x[attr] < hi for attr, (lo, hi) in self._iv.items())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Box) and self._iv == other._iv

    def __hash__(self) -> int:
        return hash(frozenset(self._iv.items()))

    def __repr__(self) -> str:
        parts = ", ".join(f"X{a}: [{lo}, {hi})" for a, (lo, hi) in sorted(self._iv.items()))
        return f"Box({{{parts}}})"


def box_intersect(a: Box, b: Box) -> Box | None:
    return a.intersect(b)


def boxes_overlap(a: Box, b: Box) -> bool:
    return a.overlaps(b)


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class Split:
    attr: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


def leaf(value: float) -> Leaf:
    return Leaf(float(value))


def split(attr: int, threshold: float, left: Node, right: Node) -> Split:
    return Split(int(attr), float(threshold), left, right)


class Tree:
    """A binary tree with leaf ids assigned depth-first, left to right.

    The nested node structure is flattened once at construction; evaluation
    walks the flat arrays.
    """

    def __init__(self, root: Node):
        self.root = root
        # flat layout: attr == -1 marks a leaf, whose leaf id is stored in `left`
        attrs: list[int] = []
        thresholds: list[float] = []
        lefts: list[int] = []
        rights: list[int] = []
        values: list[float] = []
        boxes: list[Box] = []

        def visit(node: Node, path: dict[int, Interval]) -> int:
            idx = len(attrs)
            attrs.append(-1)
            thresholds.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            if isinstance(node, Leaf):
                lefts[idx] = len(values)
                values.append(float(node.value))
                boxes.append(Box._trusted(dict(path)))
                return idx
            if not isinstance(node, Split):
                raise TypeError(f"unknown node type {type(node).__name__}")
            a, tau = node.attr, node.threshold
            if a < 0:
                raise ValueError(f"negative attribute index {a}")
            lo, hi = path.get(a, UNBOUNDED)
            if not (lo < tau and tau < hi):
                raise ValueError(f"split X{a} < {tau} leaves an unreachable branch under [{lo}, {hi})")
            attrs[idx] = a
            thresholds[idx] = tau
            lpath = dict(path)
            lpath[a] = Interval(lo, tau)
            lefts[idx] = visit(node.left, lpath)
            rpath = dict(path)
            rpath[a] = Interval(tau, hi)
            rights[idx] = visit(node.right, rpath)
            return idx

        visit(root, {})
        self._attrs = attrs
        self._thresholds = thresholds
        self._lefts = lefts
        self._rights = rights
        self.leaf_values: tuple[float, ...] = tuple(values)
        self.leaf_boxes: tuple[Box, ...] = tuple(boxes)

    @property
    def num_leaves(self) -> int:
        return len(self.leaf_values)

    @property
    def max_attr(self) -> int:
        return max(self._attrs, default=-1)

    def split_points(self) -> Iterator[tuple[int, float]]:
        for a, t in zip(self._attrs, self._thresholds):
            if a >= 0:
                yield a, t

    def eval(self, x: Sequence[float]) -> tuple[int, float]:
        """Return ``(leaf_id, value)`` of the leaf that ``x`` reaches."""
        attrs, taus, lefts, rights = self._attrs, self._thresholds, self._lefts, self._rights
        i = 0
        while attrs[i] >= 0:
            i = lefts[i] if x[attrs[i]] < taus[i] else rights[i]
        leaf_id = lefts[i]
        return leaf_id, self.leaf_values[leaf_id]

    def leaf_box(self, leaf_id: int) -> Box:
        if not 0 <= leaf_id < len(self.leaf_boxes):
            raise KeyError(f"tree has no leaf {leaf_id}")
        return self.leaf_boxes[leaf_id]

    def map_leaves(self, fn) -> "Tree":
        def rebuild(node: Node) -> Node:
            if isinstance(node, Leaf):
                return Leaf(fn(node.value))
            return Split(node.attr, node.threshold, rebuild(node.left), rebuild(node.right))

        return Tree(rebuild(self.root))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Tree) and self.root == other.root

    def __hash__(self) -> int:
        return hash(self.root)

    def __repr__(self) -> str:
        return f"Tree(leaves={self.num_leaves})"


class Ensemble:
    """Sum of trees plus a constant ``base_score``."""

    def __init__(self, trees: Iterable[Tree | Node], num_attributes: int, base_score: float = 0.0):
        self.trees: tuple[Tree, ...] = tuple(t if isinstance(t, Tree) else Tree(t) for t in trees)
        if not self.trees:
            raise ValueError("an ensemble needs at least one tree")
        self.num_attributes = int(num_attributes)
        self.base_score = float(base_score)
        for m, t in enumerate(self.trees):
            if t.max_attr >= self.num_attributes:
                raise ValueError(
                    f"tree {m} splits on attribute {t.max_attr} but num_attributes={self.num_attributes}"
                )

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def num_leaves(self) -> int:
        return sum(t.num_leaves for t in self.trees)

    def _check(self, x: Sequence[float]) -> None:
        if len(x) != self.num_attributes:
            raise ValueError(f"example has {len(x)} attributes, ensemble expects {self.num_attributes}")

    def eval(self, x: Sequence[float]) -> float:
        self._check(x)
        # correctly rounded, so the result does not depend on the tree order
        return math.fsum([self.base_score, *(t.eval(x)[1] for t in self.trees)])

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.array([self.eval(row) for row in X])

    def leaves_of(self, x: Sequence[float]) -> tuple[int, ...]:
        self._check(x)
        return tuple(t.eval(x)[0] for t in self.trees)

    def negate(self) -> "Ensemble":
        return Ensemble([t.map_leaves(lambda v: -v) for t in self.trees], self.num_attributes, -self.base_score)

    def concat(self, other: "Ensemble") -> "Ensemble":
        if other.num_attributes != self.num_attributes:
            raise ValueError(
                f"attribute count mismatch: {self.num_attributes} vs {other.num_attributes}"
            )
        return Ensemble(self.trees + other.trees, self.num_attributes, self.base_score + other.base_score)

    def split_thresholds(self) -> dict[int, list[float]]:
        """Sorted distinct thresholds per attribute."""
        out: dict[int, set[float]] = {}
        for t in self.trees:
            for a, tau in t.split_points():
                out.setdefault(a, set()).add(tau)
        return {a: sorted(v) for a, v in sorted(out.items())}

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Ensemble)
            and self.trees == other.trees
            and self.num_attributes == other.num_attributes
            and self.base_score == other.base_score
        )

    def __repr__(self) -> str:
        return f"Ensemble(trees={len(self.trees)}, num_attributes={self.num_attributes}, base_score={self.base_score})"


def constant(value: float, num_attributes: int) -> Ensemble:
    """The trivial model: one single-leaf tree predicting ``value`` everywhere."""
    return Ensemble([Tree(Leaf(float(value)))], num_attributes)


def eval_tree(tree: Tree, x: Sequence[float]) -> tuple[int, float]:
    return tree.eval(x)


def eval_ensemble(ens: Ensemble, x: Sequence[float]) -> float:
    return ens.eval(x)


def leaf_box(tree: Tree, leaf_id: int) -> Box:
    return tree.leaf_box(leaf_id)


def negate(ens: Ensemble) -> Ensemble:
    return ens.negate()


def concat(a: Ensemble, b: Ensemble) -> Ensemble:
    return a.concat(b)
