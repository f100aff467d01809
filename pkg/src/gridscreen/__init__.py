"""Topology-aware physics-informed surrogates for N-k contingency screening."""
from .grid import GridCase, build_ybus, load_case, parse_matpower
from .powerflow import Injections, PFSolution, solve_nr
from .topology import REFERENCE, Topology, count_contingencies, enumerate_contingencies

__version__ = "0.1.0"

__all__ = [
    "GridCase", "Injections", "PFSolution", "REFERENCE", "Topology", "build_ybus",
    "count_contingencies", "enumerate_contingencies", "load_case", "parse_matpower", "solve_nr",
]
