"""Problem and solution data types shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

DEPOT = "depot"
LINEHAUL = "linehaul"
BACKHAUL = "backhaul"

# Finite stand-in for "forbidden arc": strictly dominates any feasible tour cost
# while staying safe for float arithmetic.
ARC_PENALTY_FACTOR = 1e7


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    demand: float
    tw_early: float
    tw_late: float
    service: float
    role: str  # depot | linehaul | backhaul

    def __post_init__(self):
        if self.tw_early > self.tw_late:
            raise ValueError(f"node {self.id}: window opens after it closes")
        if self.demand < 0 or self.service < 0:
            raise ValueError(f"node {self.id}: negative demand or service")
        if self.role == DEPOT and self.demand != 0:
            raise ValueError(f"node {self.id}: depot must have zero demand")


@dataclass(frozen=True)
class VehicleType:
    id: int
    capacity: float
    fixed_cost: float
    var_cost: float
    count: int | None  # None = unlimited
    # Customer ids this type may serve; None = all (site dependency off or
    # unrestricted type).
    compatible: frozenset[int] | None = None
    # True only for the synthetic overflow vehicle appended to fixed fleets.
    is_extra: bool = False

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError(f"vehicle type {self.id}: capacity must be positive")
        if self.fixed_cost < 0 or self.var_cost < 0:
            raise ValueError(f"vehicle type {self.id}: negative cost")
        if self.count is not None and self.count < 1:
            raise ValueError(f"vehicle type {self.id}: count must be >= 1 or unlimited")

    def allows(self, customer: int) -> bool:
        return self.compatible is None or customer in self.compatible


@dataclass(frozen=True)
class AttributeSet:
    open_routes: bool = False
    multi_depot: bool = False
    backhaul_strict: bool = False
    backhaul_mixed: bool = False
    site_dependency: bool = False
    split_delivery: bool = False
    time_windows: bool = False
    route_duration: bool = False
    asymmetric: bool = False

    FLAG_NAMES = (
        "open_routes", "multi_depot", "backhaul_strict", "backhaul_mixed",
        "site_dependency", "split_delivery", "time_windows", "route_duration",
        "asymmetric",
    )

    def __post_init__(self):
        if self.backhaul_strict and self.backhaul_mixed:
            raise ValueError("backhaul_strict and backhaul_mixed are mutually exclusive")

    def flags(self) -> list[str]:
        return [name for name in self.FLAG_NAMES if getattr(self, name)]

    @classmethod
    def from_flags(cls, flags) -> "AttributeSet":
        flags = list(flags)
        unknown = [f for f in flags if f not in cls.FLAG_NAMES]
        if unknown:
            raise ValueError(f"unknown attribute flags: {unknown}")
        return cls(**{name: name in flags for name in cls.FLAG_NAMES})


class Instance:
    """Immutable routing problem: graph, demands, fleet, attribute flags.

    The distance matrix is materialized once at load time with the attribute
    conventions baked in: arcs into depots are zeroed for open routes, and
    depot->backhaul / backhaul->linehaul arcs carry a large penalty under
    strict backhauls so ordering violations are never improving.
    """

    def __init__(self, name, nodes, depots, customers, dist, fleet, attributes,
                 duration_limit=None, limit_on="distance"):
        self.name = name
        self.nodes = list(nodes)
        self.depots = list(depots)
        self.customers = list(customers)
        self.fleet = list(fleet)
        self.attributes = attributes
        self.duration_limit = duration_limit
        self.limit_on = limit_on  # distance | duration
        if duration_limit is not None and limit_on not in ("distance", "duration"):
            raise ValueError("limit_on must be 'distance' or 'duration'")

        n = len(self.nodes)
        ids = sorted(self.depots + self.customers)
        if ids != list(range(n)):
            raise ValueError("depots and customers must partition the node index range")
        for node in self.nodes:
            if node.role == DEPOT and node.id not in self.depots:
                raise ValueError(f"node {node.id} has depot role but is not listed as depot")
            if node.role != DEPOT and node.id in self.depots:
                raise ValueError(f"node {node.id} listed as depot but has role {node.role}")

        dist = [[float(v) for v in row] for row in dist]
        if len(dist) != n or any(len(row) != n for row in dist):
            raise ValueError("distance matrix shape does not match node count")
        for i in range(n):
            if dist[i][i] != 0.0:
                raise ValueError(f"dist[{i}][{i}] must be zero")
            for v in dist[i]:
                if v < 0 or not math.isfinite(v):
                    raise ValueError("distances must be finite and non-negative")
        self.raw_dist = [row[:] for row in dist]
        self.max_arc = max(v for row in dist for v in row)

        if attributes.open_routes:
            for i in range(n):
                for d in self.depots:
                    if i != d:
                        dist[i][d] = 0.0
        if attributes.backhaul_strict:
            penalty = ARC_PENALTY_FACTOR * max(self.max_arc, 1.0)
            back = [c for c in self.customers if self.nodes[c].role == BACKHAUL]
            line = [c for c in self.customers if self.nodes[c].role == LINEHAUL]
            for b in back:
                for d in self.depots:
                    dist[d][b] = penalty
                for l in line:
                    dist[b][l] = penalty
        self.dist = dist

        # type index -> bit, used by the O(1) compatibility mask in sequence stats
        self.type_index = {vt.id: k for k, vt in enumerate(self.fleet)}
        self.all_types_mask = (1 << len(self.fleet)) - 1
        self._compat_mask = {}
        for c in self.customers:
            mask = 0
            for k, vt in enumerate(self.fleet):
                if vt.is_extra or vt.allows(c):
                    mask |= 1 << k
            self._compat_mask[c] = mask

        self.total_demand = sum(self.nodes[c].demand for c in self.customers)
        self.linehauls = [c for c in self.customers
                          if self.nodes[c].role == LINEHAUL]
        self.backhauls = [c for c in self.customers
                          if self.nodes[c].role == BACKHAUL]

    @property
    def n(self) -> int:
        return len(self.customers)

    def compat_mask(self, customer: int) -> int:
        return self._compat_mask[customer]

    def vt(self, type_id: int) -> VehicleType:
        return self.fleet[self.type_index[type_id]]

    def unlimited_fleet(self) -> bool:
        return any(vt.count is None for vt in self.fleet if not vt.is_extra)

    def with_extra_vehicle(self) -> "Instance":
        """Append the synthetic overflow type used when a fixed fleet cannot
        absorb every customer: 10x the largest fixed cost, 100x its variable
        cost, capacity equal to total demand."""
        if any(vt.is_extra for vt in self.fleet):
            return self
        base = max(self.fleet, key=lambda t: (t.fixed_cost, t.var_cost))
        if base.fixed_cost == 0:
            base = max(self.fleet, key=lambda t: t.var_cost)
        extra = VehicleType(
            id=max(t.id for t in self.fleet) + 1,
            capacity=max(self.total_demand, max(t.capacity for t in self.fleet)),
            fixed_cost=10.0 * base.fixed_cost,
            var_cost=100.0 * base.var_cost,
            count=None,
            compatible=None,  # the overflow vehicle ignores site restrictions
            is_extra=True,
        )
        inst = Instance.__new__(Instance)
        inst.__dict__.update(self.__dict__)
        inst.fleet = self.fleet + [extra]
        inst.type_index = {vt.id: k for k, vt in enumerate(inst.fleet)}
        inst.all_types_mask = (1 << len(inst.fleet)) - 1
        inst._compat_mask = {c: m | (1 << (len(inst.fleet) - 1))
                             for c, m in self._compat_mask.items()}
        return inst


@dataclass
class Route:
    depot: int
    vehicle: int  # vehicle type id
    # (customer id, delivered quantity); quantity equals the full demand unless
    # split deliveries are on.
    visits: list[tuple[int, float]] = field(default_factory=list)
    stat: object = None  # cached SeqStat, filled by the evaluator
    cost: float = 0.0

    def customers(self) -> list[int]:
        return [c for c, _ in self.visits]

    def copy(self) -> "Route":
        return Route(self.depot, self.vehicle, list(self.visits), self.stat, self.cost)


@dataclass
class Solution:
    routes: list[Route] = field(default_factory=list)
    fleet_used: dict[int, int] = field(default_factory=dict)  # type id -> count
    objective: float = 0.0
    tw_violation: float = 0.0
    feasible: bool = True

    def counted_routes(self) -> list[Route]:
        """Routes with at least one visit; empty spares are move targets only."""
        return [r for r in self.routes if r.visits]

    def copy(self) -> "Solution":
        return Solution([r.copy() for r in self.routes], dict(self.fleet_used),
                        self.objective, self.tw_violation, self.feasible)


@dataclass
class SolverParams:
    ims: int = 30                   # restarts
    iils_base: int | None = None    # overrides the n + 5v rule when set
    tmax: float = 30.0              # seconds per set-partitioning solve
    rgap_max: float = 0.02
    n_large: int = 150
    omega: float = 1000.0           # time-warp penalty per time unit
    seed: int = 1
    cns_mode: str = "off"           # off | sfr | pda
    merge_perturbation: bool = True
    sp_enabled: bool = True
    wall_limit: float | None = None  # whole-run budget in seconds; None = no cap

    def __post_init__(self):
        if self.ims < 1 or self.tmax <= 0 or self.omega < 0:
            raise ValueError("parameters must be positive")
        if self.wall_limit is not None and self.wall_limit <= 0:
            raise ValueError("wall_limit must be positive when set")
        if not 0 < self.rgap_max < 1:
            raise ValueError("rgap_max must be in (0,1)")
        if self.cns_mode not in ("off", "sfr", "pda"):
            raise ValueError("cns_mode must be off, sfr, or pda")


@dataclass(frozen=True)
class Violation:
    kind: str
    route_index: int  # -1 for solution-level violations
    detail: str
    hard: bool = True


HARD_KINDS = ("structure", "coverage", "duplicate", "capacity", "backhaul_order",
              "backhaul_only", "duration", "fleet_count", "site")


def validate_solution(inst: Instance, sol: Solution) -> list[Violation]:
    """Check every structural invariant; empty report means the solution is
    clean apart from (reported, soft) time-warp."""
    from . import evaluation

    report = []
    covered: dict[int, float] = {}
    used: dict[int, int] = {}
    for ri, route in enumerate(sol.routes):
        if route.depot not in inst.depots:
            report.append(Violation("structure", ri, f"unknown depot {route.depot}"))
            continue
        if route.vehicle not in inst.type_index:
            report.append(Violation("structure", ri, f"unknown vehicle type {route.vehicle}"))
            continue
        vt = inst.vt(route.vehicle)
        if not route.visits:
            continue
        used[route.vehicle] = used.get(route.vehicle, 0) + 1

        seen_back = False
        roles = []
        for c, qty in route.visits:
            if c not in inst._compat_mask:
                report.append(Violation("structure", ri, f"unknown customer {c}"))
                continue
            node = inst.nodes[c]
            roles.append(node.role)
            covered[c] = covered.get(c, 0.0) + qty
            if inst.attributes.site_dependency and not (vt.is_extra or vt.allows(c)):
                report.append(Violation("site", ri, f"customer {c} incompatible with type {route.vehicle}"))
            if not inst.attributes.split_delivery and abs(qty - node.demand) > 1e-9:
                report.append(Violation("structure", ri, f"customer {c} partial quantity without split delivery"))
        if inst.attributes.backhaul_strict:
            for a, b in zip(roles, roles[1:]):
                if a == BACKHAUL and b == LINEHAUL:
                    report.append(Violation("backhaul_order", ri, "linehaul after backhaul"))
                    break
            if roles and all(r == BACKHAUL for r in roles):
                report.append(Violation("backhaul_only", ri, "route serves only backhaul customers"))

        stat = evaluation.route_stat(inst, route.depot, route.visits)
        if stat.peak > vt.capacity + 1e-9:
            report.append(Violation("capacity", ri,
                                    f"peak load {stat.peak:.6g} exceeds {vt.capacity:.6g}"))
        if inst.duration_limit is not None:
            used_len = stat.dist if inst.limit_on == "distance" else stat.dur
            if used_len > inst.duration_limit + 1e-9:
                report.append(Violation("duration", ri,
                                        f"{inst.limit_on} {used_len:.6g} exceeds {inst.duration_limit:.6g}"))

    for c in inst.customers:
        got = covered.get(c, 0.0)
        want = inst.nodes[c].demand
        if got == 0.0:
            report.append(Violation("coverage", -1, f"customer {c} not served"))
        elif inst.attributes.split_delivery:
            if abs(got - want) > 1e-9:
                report.append(Violation("coverage", -1,
                                        f"customer {c} served {got:.6g} of {want:.6g}"))
        else:
            count = sum(1 for r in sol.routes for cc, _ in r.visits if cc == c)
            if count > 1:
                report.append(Violation("duplicate", -1, f"customer {c} served {count} times"))

    for tid, cnt in used.items():
        vt = inst.vt(tid)
        if vt.count is not None and cnt > vt.count:
            report.append(Violation("fleet_count", -1,
                                    f"type {tid} uses {cnt} of {vt.count} vehicles"))
        if vt.is_extra and cnt > 0:
            report.append(Violation("extra_vehicle", -1,
                                    f"{cnt} overflow vehicle(s) still in use", hard=False))

    tw = sum(evaluation.route_stat(inst, r.depot, r.visits).tw
             for r in sol.routes if r.visits)
    if tw > 1e-9:
        report.append(Violation("time_warp", -1, f"total time warp {tw:.6g}", hard=False))
    return report


def hard_violations(report: list[Violation]) -> list[Violation]:
    return [v for v in report if v.hard]


def recompute_objective(inst: Instance, sol: Solution, omega: float) -> float:
    """Penalized objective from scratch, no caches."""
    from . import evaluation

    total = 0.0
    for route in sol.routes:
        if not route.visits:
            continue
        stat = evaluation.route_stat(inst, route.depot, route.visits)
        total += evaluation.route_cost(stat, inst.vt(route.vehicle), omega)
    return total
