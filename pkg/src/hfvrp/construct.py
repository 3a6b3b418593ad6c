"""Initial solution construction by randomized insertion.

Routes are seeded with random customers, then the remaining ones are placed
one at a time by either a nearest-insertion rule or a modified cheapest
insertion that favours customers far from the depot.  Time windows are
ignored here; capacity, duration limits and site compatibility are hard
filters, and backhaul ordering is protected both structurally and by the
penalty arcs baked into the distance matrix.  When a fixed fleet runs out of
room an overflow vehicle with huge costs absorbs the leftovers.
"""

from __future__ import annotations

import math

from .evaluation import capacity_filter, route_cost, seq_concat, seq_singleton
from .model import BACKHAUL, LINEHAUL, Instance, Route, Solution

NEAREST = "nearest"
CHEAPEST = "cheapest"
CRITERIA = (NEAREST, CHEAPEST)


def mean_arc(inst: Instance) -> float:
    n = len(inst.raw_dist)
    if n < 2:
        return 0.0
    total = sum(sum(row) for row in inst.raw_dist)
    return total / (n * (n - 1))


class _Builder:
    """One route under construction, with prefix/suffix stats so every
    insertion position prices in O(1)."""

    def __init__(self, inst, depot, vtype):
        self.inst = inst
        self.depot = depot
        self.vtype = vtype
        self.visits = []
        self.anchor = depot  # last inserted customer, for nearest insertion
        self._refresh()

    def _refresh(self):
        inst = self.inst
        dist = inst.dist
        pre = [seq_singleton(inst, self.depot)]
        pre_node = [self.depot]
        for c, q in self.visits:
            pre.append(seq_concat(pre[-1], seq_singleton(inst, c, q),
                                  dist[pre_node[-1]][c]))
            pre_node.append(c)
        suf = [seq_singleton(inst, self.depot)]
        suf_node = [self.depot]
        for c, q in reversed(self.visits):
            suf.append(seq_concat(seq_singleton(inst, c, q), suf[-1],
                                  dist[c][suf_node[-1]]))
            suf_node.append(c)
        suf.reverse()
        suf_node.reverse()
        self.pre, self.pre_node = pre, pre_node
        self.suf, self.suf_node = suf, suf_node

    def positions(self, c, q):
        """Yield (pos, distance delta, stat) for every feasible slot."""
        inst = self.inst
        node = inst.nodes[c]
        if node.role == BACKHAUL and inst.attributes.backhaul_strict:
            if not self.visits:
                return  # no backhaul may open a route
            lo = len(self.visits)
        else:
            lo = 0
        hi = len(self.visits)
        if (inst.attributes.backhaul_strict and node.role == LINEHAUL
                and self.visits):
            # a linehaul may not follow any backhaul
            hi = next((k for k, (cc, _) in enumerate(self.visits)
                       if inst.nodes[cc].role == BACKHAUL), hi)
        dist = inst.dist
        sing = seq_singleton(inst, c, q)
        vt = inst.vt(self.vtype)
        for pos in range(lo, hi + 1):
            a, b = self.pre_node[pos], self.suf_node[pos]
            stat = seq_concat(seq_concat(self.pre[pos], sing, dist[a][c]),
                              self.suf[pos], dist[c][b])
            if not capacity_filter(stat, vt, inst):
                continue
            yield pos, dist[a][c] + dist[c][b] - dist[a][b], stat

    def best_position(self, c, q):
        return min(self.positions(c, q), default=None, key=lambda t: t[1])

    def insert(self, c, q, pos):
        self.visits.insert(pos, (c, q))
        self.anchor = c
        self._refresh()

    def stat(self):
        k = len(self.visits)
        return seq_concat(self.pre[k], self.suf[k],
                          self.inst.dist[self.pre_node[k]][self.suf_node[k]])


def build_initial(inst: Instance, rng, omega: float,
                  criterion: str | None = None) -> tuple[Solution, Instance]:
    """Construct a complete starting solution.

    Returns (solution, instance); the instance comes back augmented with the
    overflow vehicle type when a fixed fleet could not absorb every customer.
    The solution keeps one empty spare route per available (depot, type)
    pair so the local search can resize the fleet.
    """
    if criterion is None:
        criterion = rng.choice(CRITERIA)
    if criterion not in CRITERIA:
        raise ValueError(f"unknown construction criterion {criterion!r}")

    unlimited = inst.unlimited_fleet()
    builders: list[_Builder] = []
    if unlimited:
        # backbone estimate: fewest vehicles of the largest type that could
        # carry everything; more routes open on demand below
        big = max(inst.fleet, key=lambda v: v.capacity).id
        v_est = max(1, math.ceil(inst.total_demand
                                 / inst.vt(big).capacity))
        for k in range(v_est):
            builders.append(_Builder(inst, inst.depots[k % len(inst.depots)], big))
    else:
        units = [(d, vt.id)
                 for vt in inst.fleet if not vt.is_extra
                 for k in range(vt.count or 0)
                 for d in [inst.depots[k % len(inst.depots)]]]
        rng.shuffle(units)
        builders = [_Builder(inst, d, t) for d, t in units]

    def fits_seed(b, c):
        return b.best_position(c, inst.nodes[c].demand) is not None

    unrouted = set(inst.customers)
    seeds = list(inst.linehauls) if inst.attributes.backhaul_strict \
        else list(inst.customers)
    rng.shuffle(seeds)
    for b in builders:
        while seeds:
            c = seeds.pop()
            if c not in unrouted:
                continue
            if fits_seed(b, c):
                b.insert(c, inst.nodes[c].demand, 0)
                unrouted.discard(c)
                break
        if not seeds:
            break

    if unlimited:
        # one open empty route per (depot, type); replenished as they fill
        for d in inst.depots:
            for vt in inst.fleet:
                builders.append(_Builder(inst, d, vt.id))

    beta = mean_arc(inst)
    site = inst.attributes.site_dependency

    def incentive(c):
        if not site:
            return 0.0
        k = bin(inst.compat_mask(c)).count("1")
        return beta / max(k, 1)

    while unrouted:
        todo = sorted(unrouted)
        best = None
        if criterion == NEAREST:
            # closest unrouted customer to any route anchor, then its
            # cheapest feasible slot within that route
            order = sorted((inst.dist[b.anchor][c], c, bi)
                           for c in todo for bi, b in enumerate(builders))
            for _d, c, bi in order:
                cand = builders[bi].best_position(c, inst.nodes[c].demand)
                if cand is not None:
                    best = (c, bi, cand[0])
                    break
        else:
            score = None
            for c in todo:
                q = inst.nodes[c].demand
                inc = incentive(c)
                for bi, b in enumerate(builders):
                    far = 0.5 * inst.dist[b.depot][c]
                    cand = b.best_position(c, q)
                    if cand is None:
                        continue
                    s = cand[1] - far - inc
                    if score is None or s < score:
                        score = s
                        best = (c, bi, cand[0])
        if best is None:
            # fleet exhausted: bring in the overflow vehicle.  Under strict
            # backhaul ordering open it with a linehaul when one is left; if
            # only backhauls strand, the route is honestly order-infeasible.
            inst = inst.with_extra_vehicle()
            extra_id = inst.fleet[-1].id
            line = [c for c in unrouted
                    if inst.nodes[c].role == LINEHAUL]
            c = min(line) if inst.attributes.backhaul_strict and line \
                else min(unrouted)
            depot = min(inst.depots, key=lambda d: inst.dist[d][c])
            for b in builders:
                b.inst = inst
            nb = _Builder(inst, depot, extra_id)
            nb.insert(c, inst.nodes[c].demand, 0)
            builders.append(nb)
            unrouted.discard(c)
            continue
        c, bi, pos = best
        was_empty = not builders[bi].visits
        builders[bi].insert(c, inst.nodes[c].demand, pos)
        unrouted.discard(c)
        if unlimited and was_empty:
            b = builders[bi]
            builders.append(_Builder(inst, b.depot, b.vtype))

    routes = []
    used = {}
    for b in builders:
        r = Route(b.depot, b.vtype, b.visits)
        if b.visits:
            r.stat = b.stat()
            r.cost = route_cost(r.stat, inst.vt(b.vtype), omega)
            used[b.vtype] = used.get(b.vtype, 0) + 1
        routes.append(r)

    # deduplicate/complete the spare empties: one per available (depot, type)
    routes = [r for r in routes if r.visits]
    for vt in inst.fleet:
        if vt.is_extra:
            continue
        if vt.count is not None and used.get(vt.id, 0) >= vt.count:
            continue
        for d in inst.depots:
            routes.append(Route(d, vt.id, []))

    sol = Solution(routes=routes, fleet_used=used)
    sol.objective = sum(r.cost for r in routes if r.visits)
    sol.tw_violation = sum(r.stat.tw for r in routes if r.visits)
    sol.feasible = sol.tw_violation <= 1e-9 and not any(
        inst.vt(r.vehicle).is_extra and r.visits for r in routes)
    return sol, inst
