"""Randomized variable neighborhood descent.

Inter-route moves (segment shifts, swaps, tail exchanges, depot moves, and
the split-delivery extensions) are explored exhaustively pair by pair with
best-improvement acceptance; every accepted move triggers an intra-route
descent on the touched routes.  Move deltas are priced by concatenating the
preserved pieces of each route, so one candidate costs a handful of
arithmetic operations regardless of route length.  Per-pair results are
cached against route version counters, so after a move only pairs involving
a changed route are rescanned.

Empty spare routes (one per depot and vehicle type with an unemployed unit)
ride along as move targets; routes emptied by a move collapse into such
spares.  The overflow vehicle type never gets a spare, so customers can
drain out of overflow routes but never into new ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .evaluation import SeqStat, seq_singleton
from .model import Instance, Route, Solution

EPS = 1e-9

# recompute every accepted move's delta from scratch and fail loudly on
# disagreement; flipped on in the test suite
debug_check_moves = False

INTER_GENERAL = ("shift10", "shift20", "swap11", "swap21", "swap22",
                 "twoopt_star", "kshift")
INTER_MD = ("shift_depot", "swap_depot")
INTER_SD = ("swap11_star", "swap21_star", "route_addition", "ksplit")
INTRA = ("reinsertion", "oropt2", "oropt3", "twoopt", "exchange")

# tags whose donor/receiver roles differ, scanned over ordered pairs
_ORDERED = {"shift10", "shift20", "swap21", "kshift", "swap21_star",
            "swap11_star"}
_GLOBAL = {"route_addition", "ksplit"}
_SINGLE = {"shift_depot"}


@dataclass
class NeighborhoodSet:
    inter: tuple
    intra: tuple = INTRA


def neighborhood_set(inst: Instance) -> NeighborhoodSet:
    inter = list(INTER_GENERAL)
    if inst.attributes.multi_depot:
        inter += list(INTER_MD)
    if inst.attributes.split_delivery:
        inter += list(INTER_SD)
    return NeighborhoodSet(tuple(inter))


@dataclass
class Move:
    tag: str
    slots: tuple  # state slot indices touched
    rewrites: list  # (slot, new visits list, new depot or None)
    delta: float
    assignments: dict = field(default_factory=dict)  # slot -> new vehicle type
    new_stats: list = field(default_factory=list)  # (slot, stat) for cns costing


def _cc(s1, s2, d):
    """Plain-tuple mirror of the sequence concatenation; field order matches
    the evaluation module's summary type."""
    d1, q1, t1, e1, l1, w1, dl1, pk1, p1, c1 = s1
    d2, q2, t2, e2, l2, w2, dl2, pk2, p2, c2 = s2
    dt = t1 - w1 + d
    wt = e2 - dt - l1
    if wt < 0.0:
        wt = 0.0
    tp = e1 + dt - l2
    if tp < 0.0:
        tp = 0.0
    e2d = e2 - dt
    l2d = l2 - dt
    pk = p1 + dl2
    pk_b = p2 + pk1
    if pk_b > pk:
        pk = pk_b
    return (d1 + d + d2, q1 + q2, t1 + d + t2 + wt,
            (e2d if e2d > e1 else e1) - wt,
            (l2d if l2d < l1 else l1) + tp,
            w1 + w2 + tp, dl1 + dl2, pk1 + pk2, pk, c1 & c2)


class RouteState:
    """One route inside the search, with prefix/suffix summaries so any
    splice prices in O(1)."""

    __slots__ = ("depot", "vtype", "visits", "pre", "pre_node", "suf",
                 "suf_node", "sing", "seg2", "seg3", "stat", "cost",
                 "version", "members", "fp")

    def __init__(self, inst, depot, vtype, visits, omega):
        self.depot = depot
        self.vtype = vtype
        self.visits = list(visits)
        self.version = 0
        self.rebuild(inst, omega)

    def rebuild(self, inst, omega):
        dist = inst.dist
        depot = self.depot
        visits = self.visits
        dsing = tuple(seq_singleton(inst, depot))
        sing = [tuple(seq_singleton(inst, c, q)) for c, q in visits]
        L = len(visits)
        pre = [dsing]
        pre_node = [depot]
        for k in range(L):
            pre.append(_cc(pre[k], sing[k], dist[pre_node[k]][visits[k][0]]))
            pre_node.append(visits[k][0])
        suf = [None] * (L + 1)
        suf_node = [0] * (L + 1)
        suf[L] = dsing
        suf_node[L] = depot
        for k in range(L - 1, -1, -1):
            suf[k] = _cc(sing[k], suf[k + 1], dist[visits[k][0]][suf_node[k + 1]])
            suf_node[k] = visits[k][0]
        self.pre, self.pre_node = pre, pre_node
        self.suf, self.suf_node = suf, suf_node
        self.sing = sing
        self.seg2 = [_cc(sing[k], sing[k + 1], dist[visits[k][0]][visits[k + 1][0]])
                     for k in range(L - 1)]
        self.seg3 = [_cc(self.seg2[k], sing[k + 2],
                         dist[visits[k + 1][0]][visits[k + 2][0]])
                     for k in range(L - 2)]
        self.stat = _cc(pre[L], suf[L], dist[pre_node[L]][depot])
        vt = inst.vt(self.vtype)
        self.cost = 0.0 if L == 0 else (
            vt.fixed_cost + vt.var_cost * self.stat[0] + omega * self.stat[5])
        members = {}
        for c, q in visits:
            members[c] = members.get(c, 0.0) + q
        self.members = members
        # hoisted feasibility filter: capacity bound, site bit, length limit
        cap = vt.capacity + 1e-9
        kbit = None
        if inst.attributes.site_dependency and not vt.is_extra:
            kbit = inst.type_index[self.vtype]
        lim = None
        lidx = 0
        if inst.duration_limit is not None and not vt.is_extra:
            lim = inst.duration_limit + 1e-9
            lidx = 2 if inst.limit_on == "duration" else 0
        self.fp = (cap, kbit, lim, lidx, vt.fixed_cost, vt.var_cost)
        self.version += 1


def _fcost(st, fp, omega):
    """Cost of a complete route summary under a route's filter params, or
    None when a hard constraint fails."""
    cap, kbit, lim, lidx, fixed, var = fp
    if st[8] > cap:
        return None
    if lim is not None and st[lidx] > lim:
        return None
    if kbit is not None and not (st[9] >> kbit) & 1:
        return None
    return fixed + var * st[0] + omega * st[5]


# ---------------------------------------------------------------------------
# inter-route scans: each returns (delta, payload) for the best improving
# candidate of the pair, or None


def _scan_shift(k, A, B, dist, omega, adjust=None, ka=0, kb=0):
    LA, LB = len(A.visits), len(B.visits)
    if LA < k:
        return None
    segs = (A.sing, A.seg2)[k - 1]
    preA, sufA, pnA, snA = A.pre, A.suf, A.pre_node, A.suf_node
    preB, sufB, pnB, snB = B.pre, B.suf, B.pre_node, B.suf_node
    fpA, fpB = A.fp, B.fp
    base = A.cost + B.cost
    best = -EPS
    bestp = None
    for i in range(LA - k + 1):
        if LA == k:
            cA = 0.0
            stA = None
        else:
            stA = _cc(preA[i], sufA[i + k], dist[pnA[i]][snA[i + k]])
            cA = _fcost(stA, fpA, omega)
            if cA is None:
                continue
        seg = segs[i]
        first = A.visits[i][0]
        last = A.visits[i + k - 1][0]
        dA = cA - base
        row_last = dist[last]
        for j in range(LB + 1):
            mid = _cc(preB[j], seg, dist[pnB[j]][first])
            stB = _cc(mid, sufB[j], row_last[snB[j]])
            cB = _fcost(stB, fpB, omega)
            if cB is None:
                continue
            delta = dA + cB
            if adjust is not None:
                delta = adjust(ka, kb, stA, stB, delta)
            if delta < best:
                best = delta
                bestp = (i, j)
    if bestp is None:
        return None
    return best, bestp


def _scan_swap(kA, kB, A, B, dist, omega, adjust=None, ka=0, kb=0):
    LA, LB = len(A.visits), len(B.visits)
    if LA < kA or LB < kB:
        return None
    segsA = (A.sing, A.seg2)[kA - 1]
    segsB = (B.sing, B.seg2)[kB - 1]
    preA, sufA, pnA, snA = A.pre, A.suf, A.pre_node, A.suf_node
    preB, sufB, pnB, snB = B.pre, B.suf, B.pre_node, B.suf_node
    fpA, fpB = A.fp, B.fp
    base = A.cost + B.cost
    best = -EPS
    bestp = None
    va, vb = A.visits, B.visits
    for i in range(LA - kA + 1):
        segA = segsA[i]
        a_first = va[i][0]
        a_last = va[i + kA - 1][0]
        pA_i = preA[i]
        pnA_i = pnA[i]
        sA = sufA[i + kA]
        snA_i = snA[i + kA]
        for j in range(LB - kB + 1):
            segB = segsB[j]
            b_first = vb[j][0]
            b_last = vb[j + kB - 1][0]
            midA = _cc(pA_i, segB, dist[pnA_i][b_first])
            stA = _cc(midA, sA, dist[b_last][snA_i])
            cA = _fcost(stA, fpA, omega)
            if cA is None:
                continue
            midB = _cc(preB[j], segA, dist[pnB[j]][a_first])
            stB = _cc(midB, sufB[j + kB], dist[a_last][snB[j + kB]])
            cB = _fcost(stB, fpB, omega)
            if cB is None:
                continue
            delta = cA + cB - base
            if adjust is not None:
                delta = adjust(ka, kb, stA, stB, delta)
            if delta < best:
                best = delta
                bestp = (i, j)
    if bestp is None:
        return None
    return best, bestp


def _scan_twoopt_star(A, B, dist, omega, adjust=None, ka=0, kb=0):
    if A.depot != B.depot:
        return None  # tail exchange would re-anchor a tail on a foreign depot
    LA, LB = len(A.visits), len(B.visits)
    preA, sufA, pnA, snA = A.pre, A.suf, A.pre_node, A.suf_node
    preB, sufB, pnB, snB = B.pre, B.suf, B.pre_node, B.suf_node
    fpA, fpB = A.fp, B.fp
    base = A.cost + B.cost
    best = -EPS
    bestp = None
    for i in range(LA + 1):
        pA = preA[i]
        pn = pnA[i]
        row = dist[pn]
        sA = sufA[i]
        snA_i = snA[i]
        for j in range(LB + 1):
            if i == LA and j == LB:
                continue
            if i + (LB - j) == 0:
                cA = 0.0
                stA = None
            else:
                stA = _cc(pA, sufB[j], row[snB[j]])
                cA = _fcost(stA, fpA, omega)
                if cA is None:
                    continue
            if j + (LA - i) == 0:
                cB = 0.0
                stB = None
            else:
                stB = _cc(preB[j], sA, dist[pnB[j]][snA_i])
                cB = _fcost(stB, fpB, omega)
                if cB is None:
                    continue
            delta = cA + cB - base
            if adjust is not None:
                delta = adjust(ka, kb, stA, stB, delta)
            if delta < best:
                best = delta
                bestp = (i, j)
    if bestp is None:
        return None
    return best, bestp


def _scan_kshift(A, B, dist, omega, adjust=None, ka=0, kb=0):
    LA, LB = len(A.visits), len(B.visits)
    if LA == 0:
        return None
    preA, sufA, pnA, snA = A.pre, A.suf, A.pre_node, A.suf_node
    fpA, fpB = A.fp, B.fp
    base = A.cost + B.cost
    endB = B.pre[LB]
    endB_node = B.pre_node[LB]
    term = B.suf[LB]
    depotB = B.suf_node[LB]
    best = -EPS
    bestp = None
    for k in range(1, min(3, LA) + 1):
        segs = (A.sing, A.seg2, A.seg3)[k - 1]
        for i in range(LA - k + 1):
            if LA == k:
                cA = 0.0
                stA = None
            else:
                stA = _cc(preA[i], sufA[i + k], dist[pnA[i]][snA[i + k]])
                cA = _fcost(stA, fpA, omega)
                if cA is None:
                    continue
            seg = segs[i]
            first = A.visits[i][0]
            last = A.visits[i + k - 1][0]
            mid = _cc(endB, seg, dist[endB_node][first])
            stB = _cc(mid, term, dist[last][depotB])
            cB = _fcost(stB, fpB, omega)
            if cB is None:
                continue
            delta = cA + cB - base
            if adjust is not None:
                delta = adjust(ka, kb, stA, stB, delta)
            if delta < best:
                best = delta
                bestp = (k, i)
    if bestp is None:
        return None
    return best, bestp


def _whole_route(inst, depot, visits, omega, fp):
    """Summary and filtered cost of an arbitrary visit list; generic path for
    the rare neighborhoods."""
    dist = inst.dist
    cur = tuple(seq_singleton(inst, depot))
    last = depot
    for c, q in visits:
        cur = _cc(cur, tuple(seq_singleton(inst, c, q)), dist[last][c])
        last = c
    cur = _cc(cur, tuple(seq_singleton(inst, depot)), dist[last][depot])
    return cur, _fcost(cur, fp, omega)


def _scan_shift_depot(A, inst, omega, adjust=None, ka=0):
    if not A.visits:
        return None
    best = -EPS
    bestp = None
    for d in inst.depots:
        if d == A.depot:
            continue
        st, c = _whole_route(inst, d, A.visits, omega, A.fp)
        if c is None:
            continue
        delta = c - A.cost
        if adjust is not None:
            delta = adjust(ka, None, st, None, delta)
        if delta < best:
            best = delta
            bestp = (d,)
    if bestp is None:
        return None
    return best, bestp


def _scan_swap_depot(A, B, inst, omega, adjust=None, ka=0, kb=0):
    if A.depot == B.depot or (not A.visits and not B.visits):
        return None
    stA, cA = _whole_route(inst, B.depot, A.visits, omega, A.fp)
    if cA is None:
        return None
    stB, cB = _whole_route(inst, A.depot, B.visits, omega, B.fp)
    if cB is None:
        return None
    if not A.visits:
        cA = 0.0
        stA = None
    if not B.visits:
        cB = 0.0
        stB = None
    delta = cA + cB - A.cost - B.cost
    if adjust is not None:
        delta = adjust(ka, kb, stA, stB, delta)
    if delta < -EPS:
        return delta, ()
    return None


def _scan_swap_star(kA, A, B, inst, dist, omega):
    """Split-delivery swap: segment of kA customers from A against one from
    B, quantities clipped to the receiving residual; clipped remainders stay
    behind as split visits."""
    LA, LB = len(A.visits), len(B.visits)
    if LA < kA or LB < 1:
        return None
    capA = A.fp[0]
    capB = B.fp[0]
    loadA = A.stat[1]
    loadB = B.stat[1]
    best = -EPS
    bestp = None
    va, vb = A.visits, B.visits
    for i in range(LA - kA + 1):
        out = va[i:i + kA]
        out_ids = [c for c, _ in out]
        if len(set(out_ids)) != kA:
            continue
        # leave alone customers with another visit in the same route, so
        # remainders never create an in-route duplicate
        if any(sum(1 for cc, _ in va if cc == x) > 1 for x in out_ids):
            continue
        q_out = sum(q for _, q in out)
        for j in range(LB):
            b, qb = vb[j]
            if b in A.members or any(c in B.members for c in out_ids):
                continue
            if sum(1 for cc, _ in vb if cc == b) > 1:
                continue
            # clip the incoming quantities to what each route can take
            qb_in = min(qb, capA - (loadA - q_out))
            if qb_in <= 1e-9:
                continue
            room_b = capB - (loadB - qb)
            new_b = []
            rem_b = room_b
            ok = True
            for c, q in out:
                take = min(q, rem_b)
                if take <= 1e-9:
                    ok = False
                    break
                new_b.append((c, take))
                rem_b -= take
            if not ok:
                continue
            visits_a = list(va[:i])
            visits_a.append((b, qb_in))
            for (c, q), (_, took) in zip(out, new_b):
                if q - took > 1e-9:
                    visits_a.append((c, q - took))
            visits_a.extend(va[i + kA:])
            visits_b = list(vb[:j])
            visits_b.extend(new_b)
            if qb - qb_in > 1e-9:
                visits_b.append((b, qb - qb_in))
            visits_b.extend(vb[j + 1:])
            stA, cA = _whole_route(inst, A.depot, visits_a, omega, A.fp)
            if cA is None:
                continue
            stB, cB = _whole_route(inst, B.depot, visits_b, omega, B.fp)
            if cB is None:
                continue
            delta = cA + cB - A.cost - B.cost
            if delta < best:
                best = delta
                bestp = (visits_a, visits_b)
    if bestp is None:
        return None
    return best, bestp


class SearchState:
    """Mutable view of a solution during descent: route slots, spare
    bookkeeping, per-pair move caches."""

    def __init__(self, inst, sol, omega, rng=None, cns_mode="off"):
        self.inst = inst
        self.omega = omega
        self.rng = rng
        self.cns_mode = cns_mode
        self.dist = inst.dist
        self.slots = []
        for r in sol.routes:
            self.slots.append(RouteState(inst, r.depot, r.vehicle, r.visits, omega))
        self.caches = {}
        self.global_version = 0
        self._normalize()

    # -- fleet/spare invariants ------------------------------------------

    def _normalize(self):
        """Collapse duplicate empties to one spare per (depot, type) with an
        unemployed unit; drop spares that lost their unit."""
        inst = self.inst
        used = {}
        for rs in self.slots:
            if rs is not None and rs.visits:
                used[rs.vtype] = used.get(rs.vtype, 0) + 1
        self.used = used
        seen = set()
        for k, rs in enumerate(self.slots):
            if rs is None or rs.visits:
                continue
            vt = inst.vt(rs.vtype)
            key = (rs.depot, rs.vtype)
            avail = (not vt.is_extra
                     and (vt.count is None or used.get(rs.vtype, 0) < vt.count))
            if not avail or key in seen:
                self.slots[k] = None
            else:
                seen.add(key)
        for vt in inst.fleet:
            if vt.is_extra:
                continue
            if vt.count is not None and used.get(vt.id, 0) >= vt.count:
                continue
            for d in inst.depots:
                if (d, vt.id) not in seen:
                    self.slots.append(RouteState(inst, d, vt.id, [], self.omega))
                    seen.add((d, vt.id))

    def live(self):
        return [k for k, rs in enumerate(self.slots) if rs is not None]

    # -- solution conversion ---------------------------------------------

    def to_solution(self) -> Solution:
        inst = self.inst
        routes = []
        used = {}
        obj = 0.0
        tw = 0.0
        extra = False
        for rs in self.slots:
            if rs is None:
                continue
            r = Route(rs.depot, rs.vtype, list(rs.visits))
            if rs.visits:
                r.stat = SeqStat(*rs.stat)
                r.cost = rs.cost
                used[rs.vtype] = used.get(rs.vtype, 0) + 1
                obj += rs.cost
                tw += rs.stat[5]
                if inst.vt(rs.vtype).is_extra:
                    extra = True
            routes.append(r)
        sol = Solution(routes=routes, fleet_used=used)
        sol.objective = obj
        sol.tw_violation = tw
        sol.feasible = tw <= 1e-9 and not extra
        return sol

    def objective(self):
        return sum(rs.cost for rs in self.slots if rs is not None and rs.visits)

    # -- CNS support -------------------------------------------------------

    def _state_view(self):
        from types import SimpleNamespace

        view_routes = []
        for rs in self.slots:
            if rs is None:
                view_routes.append(Route(0, self.inst.fleet[0].id, []))
                continue
            r = Route(rs.depot, rs.vtype, rs.visits)
            if rs.visits:
                r.stat = SeqStat(*rs.stat)
                r.cost = rs.cost
            view_routes.append(r)
        return SimpleNamespace(routes=view_routes, fleet_used=dict(self.used))

    def _cns_adjust(self, ka, stA, kb, stB, plain, view=None):
        from . import assign
        from types import SimpleNamespace

        if view is None:
            view = self._state_view()
        new_stats = [(ka, SeqStat(*stA) if stA is not None else None)]
        if kb is not None:
            new_stats.append((kb, SeqStat(*stB) if stB is not None else None))
        shim = SimpleNamespace(delta=plain, new_stats=new_stats)
        return assign.cns_cost(shim, self.inst, view, self.cns_mode,
                               omega=self.omega)

    def _make_adjust(self):
        """Per-candidate joint pricing: routing delta plus the best fleet
        reassignment the mode allows.  None when CNS is off."""
        if self.cns_mode == "off":
            return None
        view = self._state_view()

        def adjust(ka, kb, stA, stB, plain):
            return self._cns_adjust(ka, stA, kb, stB, plain, view)[0]

        return adjust

    # -- move scanning ------------------------------------------------------

    def _pair_scan(self, tag, ka, kb, adjust):
        A = self.slots[ka]
        B = self.slots[kb]
        dist = self.dist
        omega = self.omega
        if tag == "shift10":
            return _scan_shift(1, A, B, dist, omega, adjust, ka, kb)
        if tag == "shift20":
            return _scan_shift(2, A, B, dist, omega, adjust, ka, kb)
        if tag == "swap11":
            return _scan_swap(1, 1, A, B, dist, omega, adjust, ka, kb)
        if tag == "swap21":
            return _scan_swap(2, 1, A, B, dist, omega, adjust, ka, kb)
        if tag == "swap22":
            return _scan_swap(2, 2, A, B, dist, omega, adjust, ka, kb)
        if tag == "twoopt_star":
            return _scan_twoopt_star(A, B, dist, omega, adjust, ka, kb)
        if tag == "kshift":
            return _scan_kshift(A, B, dist, omega, adjust, ka, kb)
        if tag == "swap_depot":
            return _scan_swap_depot(A, B, self.inst, omega, adjust, ka, kb)
        if tag == "swap11_star":
            return _scan_swap_star(1, A, B, self.inst, dist, omega)
        if tag == "swap21_star":
            return _scan_swap_star(2, A, B, self.inst, dist, omega)
        raise ValueError(f"unknown neighborhood {tag!r}")

    def _pairs(self, tag):
        live = self.live()
        if self.rng is not None:
            live = list(live)
            self.rng.shuffle(live)  # ties go to first-found, seed-determined
        if tag in _ORDERED:
            for ka in live:
                if not self.slots[ka].visits:
                    continue  # donors need customers
                for kb in live:
                    if kb != ka:
                        yield ka, kb
        else:
            for x, ka in enumerate(live):
                for kb in live[x + 1:]:
                    if self.slots[ka].visits or self.slots[kb].visits:
                        yield ka, kb

    def _rewrites_for(self, tag, ka, kb, payload):
        A = self.slots[ka]
        B = self.slots[kb] if kb is not None else None
        va = A.visits
        if tag in ("shift10", "shift20"):
            k = 1 if tag == "shift10" else 2
            i, j = payload
            seg = va[i:i + k]
            return [(ka, va[:i] + va[i + k:], None),
                    (kb, B.visits[:j] + seg + B.visits[j:], None)]
        if tag in ("swap11", "swap21", "swap22"):
            kA = 2 if tag in ("swap21", "swap22") else 1
            kB = 2 if tag == "swap22" else 1
            i, j = payload
            segA = va[i:i + kA]
            segB = B.visits[j:j + kB]
            return [(ka, va[:i] + segB + va[i + kA:], None),
                    (kb, B.visits[:j] + segA + B.visits[j + kB:], None)]
        if tag == "twoopt_star":
            i, j = payload
            return [(ka, va[:i] + B.visits[j:], None),
                    (kb, B.visits[:j] + va[i:], None)]
        if tag == "kshift":
            k, i = payload
            seg = va[i:i + k]
            return [(ka, va[:i] + va[i + k:], None),
                    (kb, B.visits + seg, None)]
        if tag == "shift_depot":
            return [(ka, list(va), payload[0])]
        if tag == "swap_depot":
            return [(ka, list(va), B.depot), (kb, list(B.visits), A.depot)]
        if tag in ("swap11_star", "swap21_star"):
            visits_a, visits_b = payload
            return [(ka, visits_a, None), (kb, visits_b, None)]
        raise ValueError(tag)

    def best_move(self, tag):
        """Best improving move of one neighborhood, through the cache."""
        if tag in _GLOBAL:
            return self._best_global(tag)
        omega = self.omega
        adjust = self._make_adjust()
        # adjusted deltas depend on the whole fleet picture, so under CNS a
        # cache entry dies with any applied move
        gv = self.global_version if adjust is not None else -1
        cache = self.caches.setdefault(tag, {})
        best = None
        if tag in _SINGLE:
            for ka in self.live():
                A = self.slots[ka]
                ent = cache.get(ka)
                if ent is not None and ent[0] == A.version and ent[1] == gv:
                    res = ent[2]
                else:
                    res = _scan_shift_depot(A, self.inst, omega, adjust, ka)
                    cache[ka] = (A.version, gv, res)
                if res is not None and (best is None or res[0] < best[0]):
                    best = (res[0], ka, None, res[1])
        else:
            slots = self.slots
            for ka, kb in self._pairs(tag):
                A = slots[ka]
                B = slots[kb]
                key = (ka, kb)
                ent = cache.get(key)
                if (ent is not None and ent[0] == A.version
                        and ent[1] == B.version and ent[2] == gv):
                    res = ent[3]
                else:
                    res = self._pair_scan(tag, ka, kb, adjust)
                    cache[key] = (A.version, B.version, gv, res)
                if res is not None and (best is None or res[0] < best[0]):
                    best = (res[0], ka, kb, res[1])
        if best is None:
            return None
        delta, ka, kb, payload = best
        rewrites = self._rewrites_for(tag, ka, kb, payload)
        move = Move(tag, tuple(s for s, _, _ in rewrites), rewrites, delta)
        if adjust is not None and tag not in ("swap11_star", "swap21_star"):
            # re-price the champion from its plain routing delta to pull out
            # the assignment choices
            stats = []
            plain = 0.0
            for s, visits, depot in rewrites:
                rs = self.slots[s]
                d = depot if depot is not None else rs.depot
                if visits:
                    st, c = _whole_route(self.inst, d, visits, omega, rs.fp)
                    if c is None:
                        return None
                else:
                    st, c = None, 0.0
                plain += c - rs.cost
                stats.append((s, st))
            stA = stats[0][1]
            kb2, stB = (stats[1] if len(stats) > 1 else (None, None))
            adj, assigns = self._cns_adjust(stats[0][0], stA, kb2, stB, plain)
            move.delta = adj
            move.assignments = assigns
        if move.delta < -EPS:
            return move
        return None

    def _best_global(self, tag):
        cache = self.caches.setdefault(tag, {})
        ent = cache.get(())
        if ent is not None and ent[0] == self.global_version:
            res = ent[1]
        else:
            if tag == "route_addition":
                res = self._scan_route_addition()
            else:
                res = self._scan_ksplit()
            cache[()] = (self.global_version, res)
        return res

    def _scan_route_addition(self):
        """A customer split across two routes gets a route of its own,
        consolidating the two partial visits."""
        inst = self.inst
        omega = self.omega
        owners = {}
        for k in self.live():
            rs = self.slots[k]
            for c in rs.members:
                owners.setdefault(c, []).append(k)
        spares = [k for k in self.live() if not self.slots[k].visits]
        if not spares:
            return None
        best = None
        for c, ks in owners.items():
            if len(ks) < 2:
                continue
            for x in range(len(ks)):
                for y in range(x + 1, len(ks)):
                    ka, kb = ks[x], ks[y]
                    A, B = self.slots[ka], self.slots[kb]
                    va = [(cc, q) for cc, q in A.visits if cc != c]
                    vb = [(cc, q) for cc, q in B.visits if cc != c]
                    q_total = A.members[c] + B.members[c]
                    stA, cA = _whole_route(inst, A.depot, va, omega, A.fp) \
                        if va else (None, 0.0)
                    if cA is None:
                        continue
                    stB, cB = _whole_route(inst, B.depot, vb, omega, B.fp) \
                        if vb else (None, 0.0)
                    if cB is None:
                        continue
                    for ks_new in spares:
                        S = self.slots[ks_new]
                        stS, cS = _whole_route(inst, S.depot, [(c, q_total)],
                                               omega, S.fp)
                        if cS is None:
                            continue
                        delta = cA + cB + cS - A.cost - B.cost
                        if delta < -EPS and (best is None or delta < best.delta):
                            best = Move("route_addition", (ka, kb, ks_new),
                                        [(ka, va, None), (kb, vb, None),
                                         (ks_new, [(c, q_total)], None)], delta)
        return best

    def _scan_ksplit(self):
        """Remove one customer entirely and greedily re-insert it, possibly
        split over several routes by residual capacity."""
        inst = self.inst
        omega = self.omega
        best = None
        live = self.live()
        for c in inst.customers:
            owners = [k for k in live
                      if self.slots[k] is not None and c in self.slots[k].members]
            if not owners:
                continue
            demand = inst.nodes[c].demand
            removed = {}
            base = 0.0
            ok = True
            for k in owners:
                rs = self.slots[k]
                vv = [(cc, q) for cc, q in rs.visits if cc != c]
                stat, cost = _whole_route(inst, rs.depot, vv, omega, rs.fp) \
                    if vv else (None, 0.0)
                if cost is None:
                    ok = False
                    break
                removed[k] = (vv, cost)
                base += cost - rs.cost
            if not ok:
                continue
            # greedy re-insertion by cheapest feasible slot, clipped to the
            # receiving route's residual capacity
            plan = {k: list(v) for k, (v, _) in removed.items()}
            plan_cost = {k: c2 for k, (_, c2) in removed.items()}
            remaining = demand
            delta = base
            feasible = True
            while remaining > 1e-9:
                pick = None
                for k in live:
                    rs = self.slots[k]
                    vv = plan.get(k)
                    if vv is None:
                        vv = list(rs.visits)
                    if any(cc == c for cc, _ in vv):
                        continue  # one visit per customer per route
                    load = sum(q for _, q in vv)
                    room = rs.fp[0] - 1e-9 - load
                    if room <= 1e-9:
                        continue
                    take = min(remaining, room)
                    cur_cost = plan_cost.get(k, rs.cost)
                    for pos in range(len(vv) + 1):
                        cand = vv[:pos] + [(c, take)] + vv[pos:]
                        st, cost = _whole_route(inst, rs.depot, cand, omega, rs.fp)
                        if cost is None:
                            continue
                        d = cost - cur_cost
                        if pick is None or d < pick[0]:
                            pick = (d, k, pos, take, cand, cost)
                if pick is None:
                    feasible = False
                    break
                d, k, pos, take, cand, cost = pick
                plan[k] = cand
                plan_cost[k] = cost
                delta += d
                remaining -= take
            if not feasible:
                continue
            if delta < -EPS and (best is None or delta < best.delta):
                rewrites = [(k, v, None) for k, v in plan.items()
                            if v != self.slots[k].visits]
                if rewrites:
                    best = Move("ksplit", tuple(k for k, _, _ in rewrites),
                                rewrites, delta)
        return best

    # -- application --------------------------------------------------------

    def apply(self, move: Move):
        inst = self.inst
        omega = self.omega
        before = self.objective() if debug_check_moves else 0.0
        for slot, visits, depot in move.rewrites:
            rs = self.slots[slot]
            rs.visits = list(visits)
            if depot is not None:
                rs.depot = depot
            rs.rebuild(inst, omega)
        for slot, vtype in move.assignments.items():
            rs = self.slots[slot]
            if rs is None or rs.vtype == vtype:
                continue
            rs.vtype = vtype
            rs.rebuild(inst, omega)
        self.global_version += 1
        self._normalize()
        if debug_check_moves:
            after = self.objective()
            scale = max(1.0, abs(before), abs(after))
            if abs((after - before) - move.delta) > 1e-9 * scale:
                raise AssertionError(
                    f"move {move.tag} promised {move.delta} got {after - before}")

    def intra_on(self, slots, rng):
        for k in slots:
            rs = self.slots[k]
            if rs is None or not rs.visits:
                continue
            changed = _intra_descend(self.inst, rs, self.omega, rng)
            if changed:
                rs.rebuild(self.inst, self.omega)
                self.global_version += 1


# ---------------------------------------------------------------------------
# intra-route search


def _intra_tables(inst, rs):
    """Forward and reversed span summaries for one route."""
    dist = inst.dist
    visits = rs.visits
    L = len(visits)
    sing = rs.sing
    fwd = [[None] * L for _ in range(L)]
    rev = [[None] * L for _ in range(L)]
    for i in range(L):
        fwd[i][i] = sing[i]
        rev[i][i] = sing[i]
        for j in range(i + 1, L):
            fwd[i][j] = _cc(fwd[i][j - 1], sing[j], dist[visits[j - 1][0]][visits[j][0]])
            rev[i][j] = _cc(sing[j], rev[i][j - 1], dist[visits[j][0]][visits[j - 1][0]])
    return fwd, rev


def _fold_spans(inst, rs, spans, omega):
    """Route cost of depot + given spans + depot, or None if filtered."""
    dist = inst.dist
    depot = rs.depot
    cur = rs.pre[0]
    last = depot
    for st, first, lastn in spans:
        cur = _cc(cur, st, dist[last][first])
        last = lastn
    cur = _cc(cur, rs.suf[len(rs.visits)], dist[last][depot])
    return _fcost(cur, rs.fp, omega)


def _intra_best(tag, inst, rs, fwd, rev, omega):
    visits = rs.visits
    L = len(visits)
    node = [c for c, _ in visits]
    best = -EPS
    bestv = None

    def span(a, b):
        return (fwd[a][b], node[a], node[b]) if a <= b else None

    if tag in ("reinsertion", "oropt2", "oropt3"):
        k = {"reinsertion": 1, "oropt2": 2, "oropt3": 3}[tag]
        if L < k + 1:
            return None
        for i in range(L - k + 1):
            seg = (fwd[i][i + k - 1], node[i], node[i + k - 1])
            for j in range(L - k + 1):
                if j == i:
                    continue
                if j < i:
                    spans = [span(0, j - 1), seg, span(j, i - 1),
                             span(i + k, L - 1)]
                else:
                    spans = [span(0, i - 1), span(i + k, j + k - 1), seg,
                             span(j + k, L - 1)]
                spans = [s for s in spans if s is not None]
                c = _fold_spans(inst, rs, spans, omega)
                if c is None:
                    continue
                delta = c - rs.cost
                if delta < best:
                    best = delta
                    if j < i:
                        newv = (visits[:j] + visits[i:i + k] + visits[j:i]
                                + visits[i + k:])
                    else:
                        newv = (visits[:i] + visits[i + k:j + k]
                                + visits[i:i + k] + visits[j + k:])
                    bestv = newv
    elif tag == "twoopt":
        if L < 3:
            return None
        for i in range(L - 1):
            for j in range(i + 1, L):
                spans = [span(0, i - 1), (rev[i][j], node[j], node[i]),
                         span(j + 1, L - 1)]
                spans = [s for s in spans if s is not None]
                c = _fold_spans(inst, rs, spans, omega)
                if c is None:
                    continue
                delta = c - rs.cost
                if delta < best:
                    best = delta
                    bestv = visits[:i] + visits[i:j + 1][::-1] + visits[j + 1:]
    elif tag == "exchange":
        if L < 2:
            return None
        for i in range(L - 1):
            for j in range(i + 1, L):
                spans = [span(0, i - 1), span(j, j), span(i + 1, j - 1),
                         span(i, i), span(j + 1, L - 1)]
                spans = [s for s in spans if s is not None]
                c = _fold_spans(inst, rs, spans, omega)
                if c is None:
                    continue
                delta = c - rs.cost
                if delta < best:
                    best = delta
                    newv = list(visits)
                    newv[i], newv[j] = newv[j], newv[i]
                    bestv = newv
    else:
        raise ValueError(f"unknown intra neighborhood {tag!r}")
    if bestv is None:
        return None
    return best, bestv


def _intra_descend(inst, rs, omega, rng=None):
    """RVND over the intra neighborhoods, mutating rs.visits; returns True if
    anything improved."""
    changed = False
    tags = list(INTRA)
    if rng is not None:
        rng.shuffle(tags)
    active = list(tags)
    while active:
        tag = active[0]
        fwd, rev = _intra_tables(inst, rs)
        res = _intra_best(tag, inst, rs, fwd, rev, omega)
        if res is not None:
            rs.visits = list(res[1])
            rs.rebuild(inst, omega)
            changed = True
            active = list(tags)
            if rng is not None:
                rng.shuffle(active)
        else:
            active.pop(0)
    return changed


def intra_rvnd(inst: Instance, route: Route, omega: float = 0.0,
               rng=None) -> Route:
    """Descend one route to a local optimum of the intra neighborhoods; the
    vehicle assignment is left alone."""
    if not route.visits:
        return route.copy()
    rs = RouteState(inst, route.depot, route.vehicle, route.visits, omega)
    _intra_descend(inst, rs, omega, rng)
    out = Route(route.depot, route.vehicle, list(rs.visits))
    out.stat = SeqStat(*rs.stat)
    out.cost = rs.cost
    return out


# ---------------------------------------------------------------------------
# public entry points


def explore(tag: str, inst: Instance, sol: Solution, omega: float = 0.0):
    """Best improving move of one neighborhood on a solution, or None."""
    state = SearchState(inst, sol, omega)
    return state.best_move(tag)


def rvnd(inst: Instance, sol: Solution, omega: float, rng,
         cns_mode: str = "off") -> Solution:
    """Best-improvement descent over the active neighborhoods: the list is
    shuffled, explored one neighborhood at a time, reset and reshuffled after
    every improvement, and a neighborhood that yields nothing is dropped."""
    state = SearchState(inst, sol, omega, rng, cns_mode)
    descend(state, rng)
    return state.to_solution()


def descend(state: SearchState, rng):
    # polish every route first so the result is a local optimum of the intra
    # neighborhoods as well, not only of the inter ones
    state.intra_on(state.live(), rng)
    tags = list(neighborhood_set(state.inst).inter)
    active = list(tags)
    rng.shuffle(active)
    while active:
        move = state.best_move(active[0])
        if move is not None:
            state.apply(move)
            state.intra_on(move.slots, rng)
            active = list(tags)
            rng.shuffle(active)
        else:
            active.pop(0)
    return state
