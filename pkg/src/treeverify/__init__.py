"""Anytime verification of additive tree ensembles."""

from .constraints import AllOf, AtMostK, BoxConstraint, DiffersOnly, LinfBall, OneOutOfK
from .ensemble import Box, Ensemble, Interval, Leaf, Split, Tree, concat, leaf, negate, split
from .errors import Infeasible
from .graph_merge import MergeConfig, build_graph, run_merge
from .search import PairProblem, Problem, SearchConfig, run_search, run_search_two_instance
from .trace import BoundsTrace, Status

__version__ = "0.1.0"
