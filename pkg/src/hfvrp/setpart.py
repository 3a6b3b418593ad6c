"""Route pool and exact recombination over it.

Routes collected from local optima are stored as columns.  A depth-first
search then looks for the cheapest subset of columns that serves every
customer exactly once (in exact quantity under split delivery) without
using more vehicles of a type than the fleet owns.  New incumbents can be
handed to a polishing callback, whose output feeds back as a cutoff.
"""

import math
import time
from collections import namedtuple
from dataclasses import dataclass, field, replace

from .evaluation import route_cost, route_stat
from .model import Route, Solution

ADMIT_GAP = 0.10        # pool admission: objective within 10% of reference
POOL_CAP = 50_000
SD_EXACT_LIMIT = 2_000  # above this many split-delivery columns, skip the solve
TW_TOL = 1e-9
QTOL = 1e-6


class Column:
    __slots__ = ("mask", "qty", "vtype", "depot", "cost", "visits", "permanent")

    def __init__(self, mask, qty, vtype, depot, cost, visits, permanent):
        self.mask = mask
        self.qty = qty          # ((customer_index, quantity), ...) or None
        self.vtype = vtype
        self.depot = depot
        self.cost = cost
        self.visits = visits
        self.permanent = permanent

    def customers(self):
        m, out = self.mask, []
        while m:
            b = m & -m
            out.append(b.bit_length() - 1)
            m ^= b
        return out


class RoutePool:
    """Keyed column store.  Carries the instance it was built for and the
    best objective seen so far (the admission reference)."""

    def __init__(self, inst, cap=POOL_CAP):
        self.inst = inst
        self.cap = cap
        self.cols = {}
        self.f_ref = math.inf
        self.cidx = {c: i for i, c in enumerate(inst.customers)}

    def __len__(self):
        return len(self.cols)

    def columns(self):
        return list(self.cols.values())

    def permanent_count(self):
        return sum(1 for c in self.cols.values() if c.permanent)

    def _key(self, visits):
        mask = 0
        agg = {}
        for c, q in visits:
            i = self.cidx[c]
            mask |= 1 << i
            agg[i] = agg.get(i, 0.0) + q
        if self.inst.attributes.split_delivery:
            qty = tuple(sorted((i, q) for i, q in agg.items()))
            keyq = tuple((i, round(q, 6)) for i, q in qty)
        else:
            qty = keyq = None
        return mask, qty, keyq

    def admit(self, sol, f_ref, permanent):
        if not sol.objective <= (1.0 + ADMIT_GAP) * f_ref:
            return
        inst = self.inst
        for r in sol.routes:
            if not r.visits:
                continue
            vt = inst.vt(r.vehicle)
            if vt.is_extra:
                continue  # overflow routes are violation markers, not columns
            stat = r.stat if r.stat is not None else route_stat(inst, r.depot,
                                                                r.visits)
            if stat.tw > TW_TOL:
                continue
            cost = route_cost(stat, vt, 0.0)
            mask, qty, keyq = self._key(r.visits)
            key = (mask, keyq, r.vehicle, r.depot)
            old = self.cols.get(key)
            if old is not None:
                if cost < old.cost - 1e-12:
                    old.cost = cost
                    old.visits = tuple(r.visits)
                    old.qty = qty
                old.permanent = old.permanent or permanent
                continue
            if len(self.cols) >= self.cap and not self._evict():
                if not permanent:
                    continue
            self.cols[key] = Column(mask, qty, r.vehicle, r.depot, cost,
                                    tuple(r.visits), permanent)

    def _evict(self):
        # drop the lowest-value temporary: highest cost per covered customer
        worst_key, worst = None, -1.0
        for k, c in self.cols.items():
            if c.permanent:
                continue
            d = c.cost / max(1, c.mask.bit_count())
            if d > worst:
                worst_key, worst = k, d
        if worst_key is None:
            return False
        del self.cols[worst_key]
        return True

    def purge_temporaries(self):
        self.cols = {k: c for k, c in self.cols.items() if c.permanent}

    def dump(self):
        lines = []
        for c in sorted(self.cols.values(), key=lambda x: x.cost):
            ids = sorted(self.inst.customers[i] for i in c.customers())
            lines.append(f"{c.cost:.6f} {c.vtype} {c.depot} "
                         + " ".join(str(i) for i in ids))
        return "\n".join(lines)


def add_temporary_routes(pool, sol, f_best):
    pool.admit(sol, f_best, permanent=False)


def add_permanent_routes(pool, sol):
    # the incumbent always enters; permanence survives the purge
    pool.admit(sol, math.inf, permanent=True)


@dataclass
class SpModel:
    columns: list
    customers: list
    demands: list
    by_customer: list       # per customer index: column ids, cheapest first
    minshare: list          # admissible per-customer (per-unit under SD) floor
    col_share: list
    fleet_caps: dict
    sd: bool
    full_mask: int
    infeasible: bool
    fleet_pin: dict | None = None


def create_sp_model(pool):
    inst = pool.inst
    cols = sorted(pool.cols.values(), key=lambda c: (c.cost, c.mask))
    customers = list(inst.customers)
    nc = len(customers)
    sd = inst.attributes.split_delivery
    by_customer = [[] for _ in range(nc)]
    for ci, col in enumerate(cols):
        for i in col.customers():
            by_customer[i].append(ci)

    minshare = [math.inf] * nc
    for ci, col in enumerate(cols):
        if sd:
            total = sum(q for _, q in col.qty)
            unit = col.cost / total if total > 0 else math.inf
            for i, _ in col.qty:
                if unit < minshare[i]:
                    minshare[i] = unit
        else:
            share = col.cost / max(1, col.mask.bit_count())
            for i in col.customers():
                if share < minshare[i]:
                    minshare[i] = share
    col_share = []
    for col in cols:
        if sd:
            col_share.append(sum(q * minshare[i] for i, q in col.qty))
        else:
            col_share.append(sum(minshare[i] for i in col.customers()))

    return SpModel(
        columns=cols,
        customers=customers,
        demands=[inst.nodes[c].demand for c in customers],
        by_customer=by_customer,
        minshare=minshare,
        col_share=col_share,
        fleet_caps={vt.id: vt.count for vt in inst.fleet if not vt.is_extra},
        sd=sd,
        full_mask=(1 << nc) - 1,
        infeasible=any(not lst for lst in by_customer),
    )


def root_bound(model):
    if model.infeasible:
        return math.inf
    if model.sd:
        return sum(d * m for d, m in zip(model.demands, model.minshare))
    return sum(model.minshare)


SpResult = namedtuple("SpResult", "columns cost complete")


def sp_branch_and_bound(model, cutoff=math.inf, deadline=None):
    """Exact search for the cheapest partition strictly below cutoff.
    Depth-first on the lowest unserved customer, columns cheapest first;
    a deadline exit flags the result incomplete."""
    nc = len(model.customers)
    if model.infeasible:
        return SpResult(None, math.inf, True)
    if nc == 0:
        return SpResult((), 0.0, True) if 0.0 < cutoff else SpResult(None, math.inf, True)

    cols = model.columns
    by_cust = model.by_customer
    share = model.col_share
    caps = model.fleet_caps
    pin = model.fleet_pin
    full = model.full_mask
    best = {"cost": cutoff, "cols": None}
    flags = {"complete": True}
    counts = {}
    chosen = []

    def leaf_ok():
        if pin is None:
            return True
        if any(counts.get(k, 0) != v for k, v in pin.items()):
            return False
        return all(counts.get(k, 0) == 0 for k in counts if k not in pin)

    def fleet_room(k):
        used = counts.get(k, 0)
        if pin is not None:
            return used < pin.get(k, 0)
        capk = caps.get(k)
        return capk is None or used < capk

    if model.sd:
        resid = list(model.demands)

        def dfs(cost, rest, c_prev, start):
            if deadline is not None and time.perf_counter() > deadline:
                flags["complete"] = False
                return
            if cost + rest >= best["cost"] - 1e-9:
                return
            c = -1
            for i in range(nc):
                if resid[i] > QTOL:
                    c = i
                    break
            if c < 0:
                if leaf_ok():
                    best["cost"] = cost
                    best["cols"] = tuple(chosen)
                return
            lst = by_cust[c]
            # same-customer picks in increasing position, so each subset
            # shows up once
            for pos in range(start if c == c_prev else 0, len(lst)):
                ci = lst[pos]
                col = cols[ci]
                if any(q > resid[i] + QTOL for i, q in col.qty):
                    continue
                if not fleet_room(col.vtype):
                    continue
                counts[col.vtype] = counts.get(col.vtype, 0) + 1
                chosen.append(col)
                for i, q in col.qty:
                    resid[i] -= q
                dfs(cost + col.cost, rest - share[ci], c, pos + 1)
                for i, q in col.qty:
                    resid[i] += q
                chosen.pop()
                counts[col.vtype] -= 1
                if not flags["complete"]:
                    return

        dfs(0.0, root_bound(model), -1, 0)
    else:
        def dfs(mask, cost, rest):
            if deadline is not None and time.perf_counter() > deadline:
                flags["complete"] = False
                return
            if cost + rest >= best["cost"] - 1e-9:
                return
            if mask == full:
                if leaf_ok():
                    best["cost"] = cost
                    best["cols"] = tuple(chosen)
                return
            un = ~mask & full
            c = (un & -un).bit_length() - 1
            for ci in by_cust[c]:
                col = cols[ci]
                if col.mask & mask:
                    continue
                if not fleet_room(col.vtype):
                    continue
                counts[col.vtype] = counts.get(col.vtype, 0) + 1
                chosen.append(col)
                dfs(mask | col.mask, cost + col.cost, rest - share[ci])
                chosen.pop()
                counts[col.vtype] -= 1
                if not flags["complete"]:
                    return

        dfs(0, 0.0, root_bound(model))

    if best["cols"] is None:
        return SpResult(None, math.inf, flags["complete"])
    return SpResult(best["cols"], best["cost"], flags["complete"])


def fleet_fix(model, s_star, root_relax_value, rgap_max):
    """When the root gap is too wide on an unlimited-fleet run, pin the
    per-type route counts to the incumbent's composition."""
    f = s_star.objective
    if f <= 0 or not math.isfinite(f):
        return model
    gap = (f - root_relax_value) / f
    if gap <= rgap_max:
        return model
    pin = {k: v for k, v in s_star.fleet_used.items() if v > 0}
    return replace(model, fleet_pin=pin)


def _partition_solution(inst, chosen, omega):
    routes, used = [], {}
    for col in chosen:
        stat = route_stat(inst, col.depot, list(col.visits))
        vt = inst.vt(col.vtype)
        routes.append(Route(col.depot, col.vtype, list(col.visits), stat,
                            route_cost(stat, vt, omega)))
        used[col.vtype] = used.get(col.vtype, 0) + 1
    sol = Solution(routes, used)
    sol.objective = sum(r.cost for r in routes)
    sol.tw_violation = sum(r.stat.tw for r in routes)
    sol.feasible = sol.tw_violation <= TW_TOL
    return sol


def _mip_solve(pool, model, s_star, params, improve_callback):
    deadline = time.perf_counter() + params.tmax
    root = root_bound(model)
    if pool.inst.unlimited_fleet():
        model = fleet_fix(model, s_star, root, params.rgap_max)
    res = sp_branch_and_bound(model, s_star.objective, deadline)
    if res.columns is None:
        return s_star
    cand = _partition_solution(pool.inst, res.columns, params.omega)
    if improve_callback is not None:
        polished = improve_callback(cand)
        if polished.objective < cand.objective:
            cand = polished
    return cand if cand.objective < s_star.objective else s_star


def solve_sp(pool, s_star, params, improve_callback=None):
    """Recombine pooled routes into a cheaper solution if one exists.
    Loops while the exact solve keeps improving the incumbent; temporaries
    are dropped on the way out."""
    add_permanent_routes(pool, s_star)
    if pool.inst.attributes.split_delivery and len(pool) > SD_EXACT_LIMIT:
        pool.purge_temporaries()
        return s_star, pool

    improvement = True
    while improvement:
        model = create_sp_model(pool)
        cand = _mip_solve(pool, model, s_star, params, improve_callback)
        if cand.objective < s_star.objective - 1e-9:
            s_star = cand
            add_permanent_routes(pool, s_star)
            if s_star.objective < pool.f_ref:
                pool.f_ref = s_star.objective
        else:
            improvement = False
    pool.purge_temporaries()
    return s_star, pool
