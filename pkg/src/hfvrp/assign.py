"""Route-to-vehicle assignment.

Two tools for fleet reassignment during move evaluation: an exact
minimum-cost matching over individual vehicle units (square matrix,
primal-dual potentials, O(n^3)), and a cheap sequential heuristic that only
looks at unemployed vehicles.  Both price a route on a vehicle as
fixed cost + per-distance cost x route distance, with an infeasibility
sentinel where the load does not fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SENTINEL = 1.0e9  # finite stand-in for "does not fit"; checked after matching


@dataclass
class ApInstance:
    matrix: list  # square cost matrix, rows = routes (+ dummies), cols = vehicles
    n_routes: int
    n_vehicles: int
    routes: list  # (load, distance) as given
    vehicles: list  # (capacity, fixed, per-distance) as given

    @property
    def size(self):
        return len(self.matrix)


def ap_build(routes, vehicles, masks=None) -> ApInstance:
    """Cost matrix for assigning routes to vehicle units.

    routes: (load, distance) pairs. vehicles: (capacity, fixed, per-distance)
    triples. masks: optional per-route compatibility bitmask over vehicle
    columns (bit j set = column j allowed).  Dummy zero-cost routes pad the
    matrix square when vehicles outnumber routes; sentinel columns pad the
    rare opposite case so the mismatch surfaces as an infeasible matching.
    """
    nr, nv = len(routes), len(vehicles)
    size = max(nr, nv)
    matrix = []
    for i in range(nr):
        q, d = routes[i]
        row = []
        for j, (cap, fixed, per) in enumerate(vehicles):
            ok = q <= cap + 1e-9
            if ok and masks is not None:
                ok = bool((masks[i] >> j) & 1)
            row.append(fixed + per * d if ok else SENTINEL)
        row.extend(SENTINEL for _ in range(size - nv))
        matrix.append(row)
    for _ in range(size - nr):
        matrix.append([0.0] * size)
    return ApInstance(matrix, nr, nv, list(routes), list(vehicles))


@dataclass
class ApResult:
    assignment: list  # column index per row
    cost: float  # true total; inf when no sentinel-free matching exists
    feasible: bool


def hungarian(matrix) -> ApResult:
    """Minimum-cost perfect matching on a square matrix via the standard
    potentials-and-augmenting-paths scheme."""
    n = len(matrix)
    if any(len(row) != n for row in matrix):
        raise ValueError("matrix must be square")
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[j] = row occupying column j, 1-based
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        way = [0] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = INF
            j1 = 0
            row = matrix[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assignment = [0] * n
    for j in range(1, n + 1):
        if match[j]:
            assignment[match[j] - 1] = j - 1
    bad = any(matrix[i][assignment[i]] >= SENTINEL for i in range(n))
    cost = math.inf if bad else math.fsum(matrix[i][assignment[i]] for i in range(n))
    return ApResult(assignment, cost, not bad)


def _unit_cost(vt, dist):
    return vt.fixed_cost + vt.var_cost * dist


def _type_fits(vt, stat, inst, k):
    if stat.peak > vt.capacity + 1e-9:
        return False
    if inst.attributes.site_dependency and not vt.is_extra:
        return bool((stat.compat >> k) & 1)
    return True


def spare_units(inst, sol):
    """Unemployed vehicle count per non-overflow type (inf when unlimited)."""
    lv = {}
    for vt in inst.fleet:
        if vt.is_extra:
            continue
        used = sol.fleet_used.get(vt.id, 0)
        lv[vt.id] = math.inf if vt.count is None else max(vt.count - used, 0)
    return lv


def sfr(move_routes, available_vehicles, inst):
    """Sequential reassignment over unemployed vehicles.

    move_routes: (current type id, fresh SeqStat) pairs in processing order.
    available_vehicles: spare count per type id, mutated as vehicles are
    consumed; a replaced vehicle returns to the pool for the next route.
    Returns (new type per position or None, total delta), or None when no
    route improves.
    """
    changes = [None] * len(move_routes)
    delta = 0.0
    for pos, (cur_t, stat) in enumerate(move_routes):
        cur = _unit_cost(inst.vt(cur_t), stat.dist)
        best_t, best_cost = None, cur - 1e-9
        for tid, avail in available_vehicles.items():
            if avail < 1 or tid == cur_t:
                continue
            vt = inst.vt(tid)
            if not _type_fits(vt, stat, inst, inst.type_index[tid]):
                continue
            cost = _unit_cost(vt, stat.dist)
            if cost < best_cost:
                best_t, best_cost = tid, cost
        if best_t is not None:
            changes[pos] = best_t
            delta += best_cost - cur
            available_vehicles[best_t] -= 1
            available_vehicles[cur_t] = available_vehicles.get(cur_t, 0) + 1
    if all(c is None for c in changes):
        return None
    return changes, delta


def cns_cost(move, inst, sol, mode, omega=0.0):
    """Move delta with fleet reassignment folded in.

    move must expose .delta (plain routing delta under current vehicles) and
    .new_stats, a list of (route index, SeqStat or None-if-emptied) for the
    routes it touches.  Returns (delta, assignments) where assignments maps
    route index -> new type id for every route whose vehicle changes (pda
    mode may retype untouched routes as well).
    """
    if mode == "off":
        return move.delta, {}
    touched = dict(move.new_stats)
    if mode == "sfr":
        lv = spare_units(inst, sol)
        for ri, st in move.new_stats:
            if st is None:  # the move empties this route, freeing its vehicle
                t = sol.routes[ri].vehicle
                if not inst.vt(t).is_extra:
                    lv[t] = lv.get(t, 0) + 1
        pairs = [(ri, sol.routes[ri].vehicle, st)
                 for ri, st in move.new_stats if st is not None]
        out = sfr([(t, st) for _, t, st in pairs], lv, inst)
        if out is None:
            return move.delta, {}
        changes, extra = out
        assignments = {pairs[k][0]: t
                       for k, t in enumerate(changes) if t is not None}
        return move.delta + extra, assignments
    if mode != "pda":
        raise ValueError(f"unknown cns mode {mode!r}")

    # exact mode: minimum-cost matching of every route in the new solution
    # to individual vehicle units
    rows = []       # (route index, stat)
    current = 0.0   # objective of the routes being re-matched, as they stand
    for ri, r in enumerate(sol.routes):
        if ri in touched:
            st = touched[ri]
            current += r.cost
            if st is None:
                continue
        else:
            if not r.visits:
                continue
            st = r.stat
            current += r.cost
        rows.append((ri, st))
    units = []      # parallel (type id, VehicleType)
    n_rows = len(rows)
    extra_in_use = sum(1 for ri, _ in rows
                       if inst.vt(sol.routes[ri].vehicle).is_extra)
    for vt in inst.fleet:
        if vt.is_extra:
            n = extra_in_use  # overflow units can be kept, never added
        elif vt.count is None:
            n = n_rows
        else:
            n = vt.count
        units.extend((vt.id, vt) for _ in range(n))
    matrix_routes = [(st.peak, st.dist) for _, st in rows]
    masks = []
    for ri, st in rows:
        m = 0
        for j, (tid, vt) in enumerate(units):
            if vt.is_extra and not inst.vt(sol.routes[ri].vehicle).is_extra:
                continue  # never push a clean route onto the overflow type
            if _type_fits(vt, st, inst, inst.type_index[tid]):
                m |= 1 << j
        masks.append(m)
    ap = ap_build(matrix_routes, [(vt.capacity, vt.fixed_cost, vt.var_cost)
                                  for _, vt in units], masks)
    res = hungarian(ap.matrix)
    if not res.feasible:
        return move.delta, {}
    new_total = res.cost + omega * math.fsum(st.tw for _, st in rows)
    delta = new_total - current
    assignments = {}
    for k, (ri, _) in enumerate(rows):
        col = res.assignment[k]
        tid = units[col][0]
        if tid != sol.routes[ri].vehicle:
            assignments[ri] = tid
    return delta, assignments
