"""Randomized instance and route builders shared across the test modules."""

import math

from hfvrp.model import (
    BACKHAUL,
    DEPOT,
    LINEHAUL,
    AttributeSet,
    Instance,
    Node,
    VehicleType,
)

WIDE = 5.0e4  # stand-in horizon when time windows are off


def euclidean_matrix(points, asymmetric=False, rng=None):
    n = len(points)
    m = [[0.0] * n for _ in range(n)]
    for i in range(n):
        xi, yi = points[i]
        for j in range(n):
            if i == j:
                continue
            d = math.hypot(xi - points[j][0], yi - points[j][1])
            if asymmetric:
                d *= 1.0 + 0.4 * rng.random()
            m[i][j] = d
    return m


def random_instance(rng, n_customers=10, attrs=None, n_types=2, max_coord=100.0,
                    unlimited=None, name="rand"):
    """Build a small random instance honouring the given attribute set.

    Windows are drawn tight enough that random routes regularly produce
    waiting and time warp when time_windows is on.
    """
    attrs = attrs or AttributeSet()
    n_depots = 2 if attrs.multi_depot else 1
    n = n_depots + n_customers

    points = [(rng.uniform(0, max_coord), rng.uniform(0, max_coord)) for _ in range(n)]
    dist = euclidean_matrix(points, attrs.asymmetric, rng)

    horizon = 12.0 * max_coord if attrs.time_windows else WIDE
    nodes = []
    for d in range(n_depots):
        nodes.append(Node(d, points[d][0], points[d][1], 0.0, 0.0, horizon, 0.0, DEPOT))
    has_back = attrs.backhaul_strict or attrs.backhaul_mixed
    for c in range(n_depots, n):
        role = LINEHAUL
        # keep at least one linehaul so strict-backhaul routes can be legal
        if has_back and c > n_depots and rng.random() < 0.4:
            role = BACKHAUL
        if attrs.time_windows:
            a = rng.uniform(0, horizon * 0.6)
            b = a + rng.uniform(0.2 * max_coord, 3.0 * max_coord)
        else:
            a, b = 0.0, horizon
        service = rng.uniform(0, 10) if rng.random() < 0.7 else 0.0
        demand = float(rng.randint(1, 10))
        nodes.append(Node(c, points[c][0], points[c][1], demand, a, b, service, role))

    total = sum(nd.demand for nd in nodes)
    if unlimited is None:
        unlimited = rng.random() < 0.5
    fleet = []
    for k in range(n_types):
        cap = rng.uniform(0.4, 1.2) * total / max(1, n_types - 1 or 1)
        cap = max(cap, 12.0)
        fleet.append(VehicleType(
            id=k,
            capacity=cap,
            fixed_cost=rng.choice([0.0, rng.uniform(10, 200)]),
            var_cost=rng.uniform(0.8, 2.5),
            count=None if unlimited else rng.randint(2, 5),
        ))
    if attrs.site_dependency:
        allowed = {k: set() for k in range(n_types)}
        for c in range(n_depots, n):
            mask = rng.randint(1, (1 << n_types) - 1)
            for k in range(n_types):
                if (mask >> k) & 1:
                    allowed[k].add(c)
        fleet = [VehicleType(vt.id, vt.capacity, vt.fixed_cost, vt.var_cost,
                             vt.count,
                             None if len(allowed[vt.id]) == n_customers
                             else frozenset(allowed[vt.id]))
                 for vt in fleet]

    duration_limit = None
    limit_on = "distance"
    if attrs.route_duration:
        # floor: every customer must fit a route of its own, else the
        # instance is infeasible no matter what a solver does
        worst = max(min(dist[d][c] + dist[c][d] for d in range(n_depots))
                    + nodes[c].service for c in range(n_depots, n))
        duration_limit = max(rng.uniform(3.0, 8.0) * max_coord, 1.15 * worst)
        limit_on = rng.choice(["distance", "duration"])

    return Instance(
        name=name,
        nodes=nodes,
        depots=list(range(n_depots)),
        customers=list(range(n_depots, n)),
        dist=dist,
        fleet=fleet,
        attributes=attrs,
        duration_limit=duration_limit,
        limit_on=limit_on,
    )


def random_visits(rng, inst, max_len=8):
    """Random visit list (customer, quantity).

    Under strict backhauls the draw is kept order-legal (linehauls first, at
    least one of them) so the giant penalty arcs stay out of the comparison
    corpus; those arcs get their own dedicated tests.
    """
    k = rng.randint(1, min(max_len, inst.n))
    custs = rng.sample(inst.customers, k)
    if inst.attributes.backhaul_strict:
        line = [c for c in custs if inst.nodes[c].role == LINEHAUL]
        back = [c for c in custs if inst.nodes[c].role == BACKHAUL]
        if not line:
            line = [rng.choice(inst.linehauls)]
            back = [c for c in back if c != line[0]]
        custs = line + back
    visits = []
    for c in custs:
        q = inst.nodes[c].demand
        if inst.attributes.split_delivery and rng.random() < 0.5:
            q = round(q * rng.uniform(0.2, 0.9), 3)
        visits.append((c, q))
    return visits


def all_attribute_sets():
    """Every structurally valid combination of the evaluation-relevant flags:
    3 backhaul modes x open x tw x duration x asymmetric x site x split,
    with multi_depot folded over a rotating subset to keep the count sane."""
    combos = []
    i = 0
    for back in ("none", "strict", "mixed"):
        for open_r in (False, True):
            for tw in (False, True):
                for rd in (False, True):
                    for asym in (False, True):
                        for site in (False, True):
                            for split in (False, True):
                                combos.append(AttributeSet(
                                    open_routes=open_r,
                                    multi_depot=(i % 3 == 0),
                                    backhaul_strict=(back == "strict"),
                                    backhaul_mixed=(back == "mixed"),
                                    site_dependency=site,
                                    split_delivery=split,
                                    time_windows=tw,
                                    route_duration=rd,
                                    asymmetric=asym,
                                ))
                                i += 1
    return combos
