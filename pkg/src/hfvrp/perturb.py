"""Perturbation operators applied to the reference solution between descents.

Each call picks one admissible operator uniformly and applies its atomic move
one to three times with random choices.  Candidate moves that would break a
hard constraint (capacity, duration, backhaul order, site compatibility,
fleet counts) are re-drawn a bounded number of times; time warp is the one
violation a perturbation is allowed to introduce.  When nothing admissible
lands, the input comes back unchanged.
"""

from __future__ import annotations

import math

from .evaluation import route_cost, route_stat
from .model import BACKHAUL, LINEHAUL, Instance, Route, Solution

RETRIES = 30

MULTIPLE_SWAP11 = "multiple_swap11"
MULTIPLE_SHIFT11 = "multiple_shift11"
SPLIT = "split"
MULTIPLE_KSPLIT = "multiple_ksplit"
MERGE = "merge"

ALL_KINDS = (MULTIPLE_SWAP11, MULTIPLE_SHIFT11, SPLIT, MULTIPLE_KSPLIT, MERGE)


def admissible_kinds(inst: Instance, params) -> list[str]:
    kinds = [MULTIPLE_SWAP11, MULTIPLE_SHIFT11, SPLIT]
    if inst.attributes.split_delivery:
        kinds.append(MULTIPLE_KSPLIT)
    caps = {vt.capacity for vt in inst.fleet if not vt.is_extra}
    if len(caps) > 1 and getattr(params, "merge_perturbation", True):
        kinds.append(MERGE)
    return kinds


def _route_ok(inst, depot, vtype, visits):
    """Hard-constraint check for a candidate visit list; returns the stat on
    success, None on any violation.  Time warp does not count."""
    if not visits:
        return route_stat(inst, depot, visits)
    vt = inst.vt(vtype)
    if inst.attributes.backhaul_strict:
        roles = [inst.nodes[c].role for c, _ in visits]
        seen_back = False
        for r in roles:
            if r == BACKHAUL:
                seen_back = True
            elif seen_back:
                return None  # linehaul after backhaul
        if all(r == BACKHAUL for r in roles):
            return None
    stat = route_stat(inst, depot, visits)
    if stat.peak > vt.capacity + 1e-9:
        return None
    if not vt.is_extra:
        if inst.duration_limit is not None:
            used = stat.dist if inst.limit_on == "distance" else stat.dur
            if used > inst.duration_limit + 1e-9:
                return None
        if inst.attributes.site_dependency:
            k = inst.type_index[vtype]
            if not (stat.compat >> k) & 1:
                return None
    return stat


def _avail_units(inst, routes, skip=()):
    """Unemployed units per non-extra type, with the skipped routes' vehicles
    counted as returned to the pool."""
    used = {}
    for idx, r in enumerate(routes):
        if idx in skip or not r.visits:
            continue
        used[r.vehicle] = used.get(r.vehicle, 0) + 1
    avail = {}
    for vt in inst.fleet:
        if vt.is_extra:
            continue
        avail[vt.id] = math.inf if vt.count is None else vt.count - used.get(vt.id, 0)
    return avail


def _cheapest_type(inst, depot, visits, avail, omega):
    """Cheapest available vehicle type that can run these visits, or None."""
    best = None
    for vt in inst.fleet:
        if vt.is_extra or avail.get(vt.id, 0) < 1:
            continue
        stat = _route_ok(inst, depot, vt.id, visits)
        if stat is None:
            continue
        cost = route_cost(stat, vt, omega)
        if best is None or cost < best[1]:
            best = (vt.id, cost)
    return best


def _swap11_once(inst, routes, rng):
    idxs = [i for i, r in enumerate(routes) if r.visits]
    if len(idxs) < 2:
        return False
    for _ in range(RETRIES):
        ia, ib = rng.sample(idxs, 2)
        ra, rb = routes[ia], routes[ib]
        pa = rng.randrange(len(ra.visits))
        pb = rng.randrange(len(rb.visits))
        va, vb = ra.visits[pa], rb.visits[pb]
        if va[0] == vb[0]:
            continue
        if any(c == vb[0] for c, _ in ra.visits) or \
           any(c == va[0] for c, _ in rb.visits):
            continue
        new_a = list(ra.visits)
        new_b = list(rb.visits)
        new_a[pa] = vb
        new_b[pb] = va
        if _route_ok(inst, ra.depot, ra.vehicle, new_a) is None:
            continue
        if _route_ok(inst, rb.depot, rb.vehicle, new_b) is None:
            continue
        ra.visits = new_a
        rb.visits = new_b
        return True
    return False


def _shift11_once(inst, routes, rng):
    # one customer moves from the first route into the second and one moves
    # back, each landing at a random position
    idxs = [i for i, r in enumerate(routes) if r.visits]
    if len(idxs) < 2:
        return False
    for _ in range(RETRIES):
        ia, ib = rng.sample(idxs, 2)
        ra, rb = routes[ia], routes[ib]
        pa = rng.randrange(len(ra.visits))
        pb = rng.randrange(len(rb.visits))
        va, vb = ra.visits[pa], rb.visits[pb]
        if va[0] == vb[0]:
            continue
        rest_a = ra.visits[:pa] + ra.visits[pa + 1:]
        rest_b = rb.visits[:pb] + rb.visits[pb + 1:]
        if any(c == vb[0] for c, _ in rest_a) or \
           any(c == va[0] for c, _ in rest_b):
            continue
        qa = rng.randint(0, len(rest_a))
        qb = rng.randint(0, len(rest_b))
        new_a = rest_a[:qa] + [vb] + rest_a[qa:]
        new_b = rest_b[:qb] + [va] + rest_b[qb:]
        if _route_ok(inst, ra.depot, ra.vehicle, new_a) is None:
            continue
        if _route_ok(inst, rb.depot, rb.vehicle, new_b) is None:
            continue
        ra.visits = new_a
        rb.visits = new_b
        return True
    return False


def _split_once(inst, routes, rng, omega):
    cands = [i for i, r in enumerate(routes) if len(r.visits) >= 2]
    if not cands:
        return False
    for _ in range(RETRIES):
        idx = rng.choice(cands)
        r = routes[idx]
        cut = rng.randint(1, len(r.visits) - 1)
        part1, part2 = r.visits[:cut], r.visits[cut:]
        avail = _avail_units(inst, routes, skip=(idx,))
        pick1 = _cheapest_type(inst, r.depot, part1, avail, omega)
        if pick1 is None:
            continue
        avail[pick1[0]] -= 1
        pick2 = _cheapest_type(inst, r.depot, part2, avail, omega)
        if pick2 is None:
            continue
        r.visits = part1
        r.vehicle = pick1[0]
        routes.append(Route(r.depot, pick2[0], part2))
        return True
    return False


def _ksplit_once(inst, routes, rng, omega):
    present = sorted({c for r in routes for c, _ in r.visits})
    if not present:
        return False
    for _ in range(RETRIES):
        c = rng.choice(present)
        demand = inst.nodes[c].demand
        plan = {}
        for i, r in enumerate(routes):
            if any(cc == c for cc, _ in r.visits):
                plan[i] = [(cc, q) for cc, q in r.visits if cc != c]
        # greedy cheapest reinsertion, clipped by residual capacity
        remaining = demand
        ok = True
        while remaining > 1e-9:
            pick = None
            for i, r in enumerate(routes):
                vv = plan.get(i, r.visits)
                if any(cc == c for cc, _ in vv):
                    continue
                cap = inst.vt(r.vehicle).capacity
                room = cap - sum(q for _, q in vv)
                if room <= 1e-9:
                    continue
                take = min(remaining, room)
                base_stat = _route_ok(inst, r.depot, r.vehicle, vv)
                base = 0.0 if base_stat is None or not vv else \
                    route_cost(base_stat, inst.vt(r.vehicle), omega)
                if base_stat is None and vv:
                    continue
                for pos in range(len(vv) + 1):
                    cand = vv[:pos] + [(c, take)] + vv[pos:]
                    stat = _route_ok(inst, r.depot, r.vehicle, cand)
                    if stat is None:
                        continue
                    d = route_cost(stat, inst.vt(r.vehicle), omega) - base
                    if pick is None or d < pick[0]:
                        pick = (d, i, cand, take)
            if pick is None:
                ok = False
                break
            _, i, cand, take = pick
            plan[i] = cand
            remaining -= take
        if not ok:
            continue
        for i, vv in plan.items():
            routes[i].visits = vv
        return True
    return False


def _merge_plan(inst, sol_routes, rng, omega):
    """Pick a random undersized donor and the receiver with the best classic
    savings among feasible end-joinings; None when nothing merges."""
    live = [(i, r) for i, r in enumerate(sol_routes) if r.visits]
    if len(live) < 2:
        return None
    maxcap = max((vt.capacity for vt in inst.fleet if not vt.is_extra),
                 default=0.0)
    donors = [(i, r) for i, r in live
              if not inst.vt(r.vehicle).is_extra
              and inst.vt(r.vehicle).capacity < maxcap - 1e-9]
    if not donors:
        return None
    di, donor = rng.choice(donors) if rng is not None else donors[0]
    best = None
    for rj, recv in live:
        if rj == di:
            continue
        if {c for c, _ in donor.visits} & {c for c, _ in recv.visits}:
            continue
        for first, second in ((recv, donor), (donor, recv)):
            i_node = first.visits[-1][0]
            j_node = second.visits[0][0]
            save = (inst.dist[i_node][first.depot]
                    + inst.dist[second.depot][j_node]
                    - inst.dist[i_node][j_node])
            if best is not None and save <= best[0]:
                continue
            merged = first.visits + second.visits
            avail = _avail_units(inst, sol_routes, skip=(di, rj))
            pick = _cheapest_type(inst, first.depot, merged, avail, omega)
            if pick is None:
                continue
            best = (save, di, rj, first.depot, pick[0], merged)
    return best


def merge_candidates(inst: Instance, sol: Solution, rng=None, omega: float = 0.0):
    """Donor and receiver routes for a savings-style merge, or None."""
    plan = _merge_plan(inst, sol.routes, rng, omega)
    if plan is None:
        return None
    _, di, rj, _, _, _ = plan
    return sol.routes[di], sol.routes[rj]


def _merge_once(inst, routes, rng, omega):
    plan = _merge_plan(inst, routes, rng, omega)
    if plan is None:
        return False
    _, di, rj, depot, vtype, merged = plan
    keep = [r for i, r in enumerate(routes) if i not in (di, rj)]
    keep.append(Route(depot, vtype, merged))
    routes[:] = keep
    return True


def _finish(inst, routes, omega):
    out = []
    used = {}
    obj = 0.0
    tw = 0.0
    extra = False
    for r in routes:
        if not r.visits:
            continue
        stat = route_stat(inst, r.depot, r.visits)
        r.stat = stat
        r.cost = route_cost(stat, inst.vt(r.vehicle), omega)
        used[r.vehicle] = used.get(r.vehicle, 0) + 1
        obj += r.cost
        tw += stat.tw
        if inst.vt(r.vehicle).is_extra:
            extra = True
        out.append(r)
    sol = Solution(routes=out, fleet_used=used)
    sol.objective = obj
    sol.tw_violation = tw
    sol.feasible = tw <= 1e-9 and not extra
    return sol


def perturb(inst: Instance, sol: Solution, rng, params) -> Solution:
    """One uniformly chosen admissible perturbation; the input solution is
    never mutated and comes back unchanged when nothing lands."""
    omega = getattr(params, "omega", 0.0)
    kind = rng.choice(admissible_kinds(inst, params))
    routes = [Route(r.depot, r.vehicle, list(r.visits))
              for r in sol.routes if r.visits]
    hits = 0
    if kind == SPLIT:
        hits = 1 if _split_once(inst, routes, rng, omega) else 0
    elif kind == MERGE:
        hits = 1 if _merge_once(inst, routes, rng, omega) else 0
    else:
        times = rng.randint(1, 3)
        for _ in range(times):
            if kind == MULTIPLE_SWAP11:
                landed = _swap11_once(inst, routes, rng)
            elif kind == MULTIPLE_SHIFT11:
                landed = _shift11_once(inst, routes, rng)
            else:
                landed = _ksplit_once(inst, routes, rng, omega)
            if not landed:
                break
            hits += 1
    if hits == 0:
        return sol
    return _finish(inst, routes, omega)
