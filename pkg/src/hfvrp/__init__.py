"""Heterogeneous fleet vehicle routing solver.

Multi-start iterated local search with a randomized variable neighborhood
descent core, a set-partitioning recombination step over a pool of routes
collected during the search, and optional joint reassignment of vehicles
to routes.  Handles fixed and variable costs, limited or unlimited fleets,
open routes, backhauls, split deliveries, multiple depots, site
dependencies, time windows and mixed linehaul/backhaul loading.
"""

from .model import (
    Node,
    VehicleType,
    AttributeSet,
    Instance,
    Route,
    Solution,
    SolverParams,
    Violation,
    validate_solution,
    hard_violations,
    recompute_objective,
    DEPOT,
    LINEHAUL,
    BACKHAUL,
)
from .evaluation import (
    SeqStat,
    seq_singleton,
    seq_concat,
    route_stat,
    route_cost,
    capacity_filter,
)

__version__ = "0.1.0"

__all__ = [
    "Node",
    "VehicleType",
    "AttributeSet",
    "Instance",
    "Route",
    "Solution",
    "SolverParams",
    "Violation",
    "validate_solution",
    "hard_violations",
    "recompute_objective",
    "DEPOT",
    "LINEHAUL",
    "BACKHAUL",
    "SeqStat",
    "seq_singleton",
    "seq_concat",
    "route_stat",
    "route_cost",
    "capacity_filter",
    "__version__",
]
