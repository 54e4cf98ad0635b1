"""Anytime bound traces shared by the search engine and the Merge baseline."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Any, Optional


class Status(str, enum.Enum):
    EXACT = "EXACT"
    TIMEOUT = "TIMEOUT"
    MEMORY = "MEMORY"
    INFEASIBLE = "INFEASIBLE"


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    t: float
    upper: float
    lower: float
    witness: Optional[Any] = None


@dataclass
class BoundsTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    status: Status = Status.TIMEOUT
    solutions: list = field(default_factory=list)
    steps: int = 0

    @property
    def final(self) -> TraceEntry:
        return self.entries[-1]

    @property
    def upper(self) -> float:
        return self.entries[-1].upper if self.entries else math.inf

    @property
    def lower(self) -> float:
        return self.entries[-1].lower if self.entries else -math.inf

    @property
    def witness(self):
        for e in reversed(self.entries):
            if e.witness is not None:
                return e.witness
        return None

    def check(self) -> None:
        """Raise InvariantViolation unless upper is non-increasing, lower non-decreasing and lower <= upper."""
        prev = None
        for e in self.entries:
            if e.lower > e.upper:
                raise InvariantViolation(f"lower {e.lower} above upper {e.upper} at t={e.t}")
            if prev is not None:
                if e.t < prev.t:
                    raise InvariantViolation("trace time goes backwards")
                if e.upper > prev.upper:
                    raise InvariantViolation(f"upper bound rose from {prev.upper} to {e.upper}")
                if e.lower < prev.lower:
                    raise InvariantViolation(f"lower bound fell from {prev.lower} to {e.lower}")
            prev = e


class Recorder:
    """Appends trace entries on bound changes, clamping to keep the trace monotone."""

    def __init__(self, trace: BoundsTrace, start: float | None = None):
        self.trace = trace
        self.start = time.perf_counter() if start is None else start
        self.upper = math.inf
        self.lower = -math.inf

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def update(self, upper: float, lower: float, witness=None, force: bool = False) -> None:
        # the optimum lies in [self.lower, self.upper]; bound sums taken in a
        # different order may land an ulp outside, so clamp into that range
        upper = max(min(upper, self.upper), self.lower)
        lower = min(max(lower, self.lower), upper)
        if force or upper != self.upper or lower != self.lower or witness is not None:
            self.trace.entries.append(TraceEntry(self.elapsed(), upper, lower, witness))
        self.upper, self.lower = upper, lower

    def finish(self, status: Status) -> BoundsTrace:
        self.trace.status = status
        if status is Status.INFEASIBLE:
            self.trace.entries.append(TraceEntry(self.elapsed(), -math.inf, -math.inf))
        else:
            upper = self.lower if status is Status.EXACT else self.upper
            self.update(upper, self.lower, force=not self.trace.entries)
        return self.trace
