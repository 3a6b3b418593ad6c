"""Pool bookkeeping and the exact partition search, checked against subset
enumeration oracles."""

import math
import random
import time

import pytest

import hfvrp.setpart as SP
from helpers import euclidean_matrix
from hfvrp.model import (
    DEPOT,
    LINEHAUL,
    AttributeSet,
    Instance,
    Node,
    Route,
    Solution,
    SolverParams,
    VehicleType,
    validate_solution,
    hard_violations,
)
from hfvrp.evaluation import route_cost, route_stat


def _inst(points, fleet, demands=None, attrs=None, dist=None, windows=None):
    n = len(points)
    demands = demands or [1.0] * (n - 1)
    attrs = attrs or AttributeSet()
    nodes = [Node(0, points[0][0], points[0][1], 0.0, 0.0, 5e4, 0.0, DEPOT)]
    for c in range(1, n):
        tw = (windows or {}).get(c, (0.0, 5e4))
        nodes.append(Node(c, points[c][0], points[c][1], demands[c - 1],
                          tw[0], tw[1], 0.0, LINEHAUL))
    return Instance("manual", nodes, [0], list(range(1, n)),
                    dist if dist is not None else euclidean_matrix(points),
                    fleet, attrs)


def _sol(inst, routes, omega=0.0):
    rs = []
    used = {}
    for depot, vt, visits in routes:
        stat = route_stat(inst, depot, visits)
        rs.append(Route(depot, vt, list(visits), stat,
                        route_cost(stat, inst.vt(vt), omega)))
        used[vt] = used.get(vt, 0) + 1
    s = Solution(rs, used)
    s.objective = sum(r.cost for r in rs)
    s.tw_violation = sum(r.stat.tw for r in rs)
    s.feasible = s.tw_violation <= 1e-9
    return s


def _col(ids, cost, vtype=0, qty=None, depot=0):
    mask = 0
    for i in ids:
        mask |= 1 << i
    if qty is None:
        visits = tuple((i + 1, 1.0) for i in sorted(ids))
        qv = None
    else:
        qv = tuple(sorted(qty))
        visits = tuple((i + 1, q) for i, q in qv)
    return SP.Column(mask, qv, vtype, depot, cost, visits, False)


def _mk_model(cols, nc, caps=None, sd=False, demands=None):
    cols = sorted(cols, key=lambda c: (c.cost, c.mask))
    by_customer = [[] for _ in range(nc)]
    minshare = [math.inf] * nc
    for ci, col in enumerate(cols):
        for i in col.customers():
            by_customer[i].append(ci)
        if sd:
            total = sum(q for _, q in col.qty)
            unit = col.cost / total
            for i, _ in col.qty:
                minshare[i] = min(minshare[i], unit)
        else:
            share = col.cost / col.mask.bit_count()
            for i in col.customers():
                minshare[i] = min(minshare[i], share)
    col_share = []
    for col in cols:
        if sd:
            col_share.append(sum(q * minshare[i] for i, q in col.qty))
        else:
            col_share.append(sum(minshare[i] for i in col.customers()))
    return SP.SpModel(columns=cols, customers=list(range(1, nc + 1)),
                      demands=demands or [1.0] * nc,
                      by_customer=by_customer, minshare=minshare,
                      col_share=col_share, fleet_caps=caps or {},
                      sd=sd, full_mask=(1 << nc) - 1,
                      infeasible=any(not l for l in by_customer))


def _enum_partition(cols, nc, caps=None):
    full = (1 << nc) - 1
    best = math.inf
    for m in range(1 << len(cols)):
        mask, cost, counts, ok = 0, 0.0, {}, True
        for idx in range(len(cols)):
            if m >> idx & 1:
                col = cols[idx]
                if col.mask & mask:
                    ok = False
                    break
                mask |= col.mask
                cost += col.cost
                counts[col.vtype] = counts.get(col.vtype, 0) + 1
        if not ok or mask != full:
            continue
        if caps and any(caps.get(k) is not None and c > caps[k]
                        for k, c in counts.items()):
            continue
        best = min(best, cost)
    return best


def _enum_sd(cols, demands, caps=None):
    best = math.inf
    for m in range(1 << len(cols)):
        tot = [0.0] * len(demands)
        cost, counts = 0.0, {}
        for idx in range(len(cols)):
            if m >> idx & 1:
                col = cols[idx]
                cost += col.cost
                counts[col.vtype] = counts.get(col.vtype, 0) + 1
                for i, q in col.qty:
                    tot[i] += q
        if any(abs(t - d) > 1e-6 for t, d in zip(tot, demands)):
            continue
        if caps and any(caps.get(k) is not None and c > caps[k]
                        for k, c in counts.items()):
            continue
        best = min(best, cost)
    return best


# ------------------------------------------------------------------ pool

def test_pool_admission_tw_gap_and_extra_rules():
    windows = {1: (0.0, 10.0), 2: (20.0, 30.0)}
    fleet = [VehicleType(0, 10.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (2, 0)], fleet,
                 attrs=AttributeSet(time_windows=True), windows=windows)
    good = _sol(inst, [(0, 0, [(1, 1.0), (2, 1.0)])])
    warped = _sol(inst, [(0, 0, [(2, 1.0), (1, 1.0)])], omega=1.0)
    assert warped.routes[0].stat.tw > 0

    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, good, math.inf)
    SP.add_temporary_routes(pool, warped, math.inf)
    assert len(pool) == 1  # the time-warped route stays out

    pool2 = SP.RoutePool(inst)
    SP.add_temporary_routes(pool2, good, good.objective / 2.0)
    assert len(pool2) == 0  # objective beyond (1+g) times the reference

    # overflow-vehicle routes are not columns
    aug = inst.with_extra_vehicle()
    extra_id = next(vt.id for vt in aug.fleet if vt.is_extra)
    dumped = _sol(aug, [(0, extra_id, [(1, 1.0)])])
    pool3 = SP.RoutePool(aug)
    SP.add_temporary_routes(pool3, dumped, math.inf)
    assert len(pool3) == 0


def test_pool_dedup_keeps_cheapest_order():
    # asymmetric arcs so the two visit orders cost differently
    dist = [[0.0, 1.0, 5.0],
            [5.0, 0.0, 1.0],
            [1.0, 5.0, 0.0]]
    fleet = [VehicleType(0, 10.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (2, 0)], fleet,
                 attrs=AttributeSet(asymmetric=True), dist=dist)
    dear = _sol(inst, [(0, 0, [(2, 1.0), (1, 1.0)])])
    cheap = _sol(inst, [(0, 0, [(1, 1.0), (2, 1.0)])])
    assert cheap.objective < dear.objective

    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, dear, math.inf)
    assert len(pool) == 1
    SP.add_temporary_routes(pool, cheap, math.inf)
    assert len(pool) == 1
    col = pool.columns()[0]
    assert col.cost == pytest.approx(cheap.objective)
    assert col.visits == ((1, 1.0), (2, 1.0))
    # re-adding the dear order changes nothing
    SP.add_temporary_routes(pool, dear, math.inf)
    assert pool.columns()[0].cost == pytest.approx(cheap.objective)


def test_permanent_flag_upgrades_and_survives_purge():
    fleet = [VehicleType(0, 10.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (2, 0)], fleet)
    a = _sol(inst, [(0, 0, [(1, 1.0)])])
    b = _sol(inst, [(0, 0, [(2, 1.0)])])
    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, a, math.inf)
    SP.add_temporary_routes(pool, b, math.inf)
    assert pool.permanent_count() == 0
    SP.add_permanent_routes(pool, a)  # upgrade in place
    assert len(pool) == 2 and pool.permanent_count() == 1
    pool.purge_temporaries()
    assert len(pool) == 1
    assert pool.columns()[0].visits == ((1, 1.0),)


def test_sd_quantity_vectors_stay_distinct():
    fleet = [VehicleType(0, 10.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (2, 0)], fleet, demands=[4.0, 1.0],
                 attrs=AttributeSet(split_delivery=True))
    s1 = _sol(inst, [(0, 0, [(1, 3.0), (2, 1.0)]), (0, 0, [(1, 1.0)])])
    s2 = _sol(inst, [(0, 0, [(1, 2.0), (2, 1.0)]), (0, 0, [(1, 2.0)])])
    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, s1, math.inf)
    SP.add_temporary_routes(pool, s2, math.inf)
    assert len(pool) == 4  # two splits of customer 1 kept apart
    SP.add_temporary_routes(pool, s1, math.inf)
    assert len(pool) == 4


def test_pool_eviction_drops_worst_temporary_first():
    fleet = [VehicleType(0, 10.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (9, 0), (2, 0)], fleet)
    cheap_pair = _sol(inst, [(0, 0, [(1, 1.0), (3, 1.0)])])   # cost 5ish
    dear_single = _sol(inst, [(0, 0, [(2, 1.0)])])            # cost 18
    newcomer = _sol(inst, [(0, 0, [(1, 1.0)])])
    pool = SP.RoutePool(inst, cap=2)
    SP.add_temporary_routes(pool, cheap_pair, math.inf)
    SP.add_temporary_routes(pool, dear_single, math.inf)
    SP.add_temporary_routes(pool, newcomer, math.inf)
    assert len(pool) == 2
    masks = {c.mask for c in pool.columns()}
    assert 0b010 not in masks  # the 18-per-customer column went

    pool2 = SP.RoutePool(inst, cap=1)
    SP.add_permanent_routes(pool2, dear_single)
    SP.add_temporary_routes(pool2, newcomer, math.inf)
    assert len(pool2) == 1
    assert pool2.columns()[0].permanent  # permanents never evicted


def test_pool_dump_lists_one_column_per_line():
    fleet = [VehicleType(0, 10.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (2, 0)], fleet)
    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, _sol(inst, [(0, 0, [(1, 1.0), (2, 1.0)])]),
                            math.inf)
    line = pool.dump().splitlines()[0].split()
    assert line[1:3] == ["0", "0"]
    assert line[3:] == ["1", "2"]
    assert float(line[0]) == pytest.approx(4.0)  # 0->1->2->0 on the x axis


# ------------------------------------------------------------------ search

def test_bnb_picks_cheaper_single_column():
    model = _mk_model([_col([0], 7.0), _col([0], 5.0)], 1)
    res = SP.sp_branch_and_bound(model)
    assert res.complete and res.cost == pytest.approx(5.0)
    assert len(res.columns) == 1


def test_bnb_matches_enumeration_on_random_pools():
    rng = random.Random(991)
    t0 = time.perf_counter()
    checked = 0
    for trial in range(100):
        nc = rng.randint(5, 8)
        cols = [_col([i], rng.uniform(4.0, 30.0), rng.randint(0, 1))
                for i in range(nc)]
        if trial % 7 == 0:
            cols.pop(rng.randrange(nc))  # sometimes leave a customer bare
        while len(cols) < rng.randint(10, 14):
            k = rng.randint(2, min(4, nc))
            ids = rng.sample(range(nc), k)
            cols.append(_col(ids, rng.uniform(3.0, 20.0) * k ** 0.5,
                             rng.randint(0, 1)))
        caps = None if trial % 3 else {0: rng.randint(1, 3), 1: None}
        model = _mk_model(cols, nc, caps=caps)
        res = SP.sp_branch_and_bound(model)
        truth = _enum_partition(model.columns, nc, caps)
        assert res.complete
        if math.isinf(truth):
            assert res.columns is None
        else:
            assert res.cost == pytest.approx(truth, abs=1e-9)
            used = 0
            for col in res.columns:
                assert not used & col.mask
                used |= col.mask
            assert used == model.full_mask
        checked += 1
    assert checked == 100
    assert time.perf_counter() - t0 < 30.0


def test_bnb_fleet_row_binds():
    cols = [_col([0], 1.0, vtype=0), _col([1], 1.0, vtype=0),
            _col([0, 1], 10.0, vtype=0)]
    loose = SP.sp_branch_and_bound(_mk_model(cols, 2, caps={0: 2}))
    tight = SP.sp_branch_and_bound(_mk_model(cols, 2, caps={0: 1}))
    assert loose.cost == pytest.approx(2.0)
    assert tight.cost == pytest.approx(10.0)
    assert sum(1 for c in tight.columns if c.vtype == 0) == 1


def test_bnb_sd_matches_enumeration():
    rng = random.Random(424)
    for _ in range(40):
        nc = rng.randint(3, 5)
        demands = [float(rng.randint(1, 3)) for _ in range(nc)]
        cols = []
        for i in range(nc):  # full singles keep most pools coverable
            cols.append(_col([i], rng.uniform(5.0, 15.0),
                             qty=[(i, demands[i])]))
        while len(cols) < rng.randint(7, 10):
            k = rng.randint(1, min(3, nc))
            ids = rng.sample(range(nc), k)
            qty = [(i, float(rng.randint(1, int(demands[i])))) for i in ids]
            cols.append(_col(ids, rng.uniform(4.0, 12.0) * k ** 0.5, qty=qty))
        model = _mk_model(cols, nc, sd=True, demands=demands)
        res = SP.sp_branch_and_bound(model)
        truth = _enum_sd(model.columns, demands)
        assert res.complete
        if math.isinf(truth):
            assert res.columns is None
        else:
            assert res.cost == pytest.approx(truth, abs=1e-9)
            tot = [0.0] * nc
            for col in res.columns:
                for i, q in col.qty:
                    tot[i] += q
            assert tot == pytest.approx(demands, abs=1e-6)


def test_bnb_deadline_marks_incomplete():
    rng = random.Random(7)
    cols = [_col([i], 10.0) for i in range(8)]
    cols += [_col(rng.sample(range(8), 3), rng.uniform(5, 25))
             for _ in range(12)]
    model = _mk_model(cols, 8)
    res = SP.sp_branch_and_bound(model, deadline=time.perf_counter())
    assert not res.complete


def test_fleet_fix_trigger_and_effect():
    cols = [_col([0, 1], 10.0, vtype=0),
            _col([0], 2.0, vtype=1), _col([1], 3.0, vtype=1)]
    model = _mk_model(cols, 2)
    incumbent = Solution([], {0: 1})
    incumbent.objective = 10.0

    same = SP.fleet_fix(model, incumbent, 10.0, 0.02)  # gap 0
    assert same is model

    pinned = SP.fleet_fix(model, incumbent, 9.0, 0.02)  # gap 10%
    assert pinned.fleet_pin == {0: 1}
    free = SP.sp_branch_and_bound(model)
    fixed = SP.sp_branch_and_bound(pinned)
    assert free.cost == pytest.approx(5.0)
    assert fixed.cost == pytest.approx(10.0)  # held to the incumbent's fleet
    assert fixed.cost >= free.cost


# ------------------------------------------------------------------ solve

def test_solve_sp_identity_when_pool_only_holds_incumbent():
    fleet = [VehicleType(0, 4.0, 3.0, 1.0, 4)]
    inst = _inst([(0, 0), (1, 0), (2, 0), (3, 0)], fleet)
    s = _sol(inst, [(0, 0, [(1, 1.0), (2, 1.0)]), (0, 0, [(3, 1.0)])],
             omega=1000.0)
    pool = SP.RoutePool(inst)
    out, pool = SP.solve_sp(pool, s, SolverParams(tmax=5.0))
    assert out.objective == pytest.approx(s.objective)
    assert len(pool) == 2 and pool.permanent_count() == 2


def test_solve_sp_recombines_routes_from_two_restarts():
    pts = [(0, 0), (0, 1.0), (0, 2.0), (0, 2.1), (0, 1.1), (10, 0), (11, 0)]
    fleet = [VehicleType(0, 2.0, 0.0, 1.0, 6),
             VehicleType(1, 6.0, 30.0, 1.0, 2)]
    inst = _inst(pts, fleet)
    first = _sol(inst, [(0, 0, [(1, 1.0), (2, 1.0)]),
                        (0, 0, [(3, 1.0), (4, 1.0)]),
                        (0, 0, [(5, 1.0), (6, 1.0)])])
    second = _sol(inst, [(0, 0, [(1, 1.0), (4, 1.0)]),
                         (0, 0, [(2, 1.0), (3, 1.0)]),
                         (0, 0, [(5, 1.0)]), (0, 0, [(6, 1.0)])])
    incumbent = _sol(inst, [(0, 1, [(c, 1.0) for c in range(1, 7)])])

    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, first, math.inf)
    SP.add_temporary_routes(pool, second, math.inf)
    out, pool = SP.solve_sp(pool, incumbent, SolverParams(tmax=5.0))

    model = SP.create_sp_model(pool)
    truth = _enum_partition(model.columns, len(inst.customers))
    assert out.objective == pytest.approx(truth)
    assert out.objective < min(first.objective, second.objective,
                               incumbent.objective)
    # the winning mix takes pair routes from both restarts plus first's far pair
    got = {tuple(sorted(c for c, _ in r.visits)) for r in out.routes}
    assert (1, 4) in got and (2, 3) in got and (5, 6) in got
    assert not hard_violations(validate_solution(inst, out))


def test_solve_sp_uses_callback_improvements():
    pts = [(0, 0), (0, 1.0), (0, 2.0), (0, 2.1), (0, 1.1)]
    fleet = [VehicleType(0, 2.0, 0.0, 1.0, 4),
             VehicleType(1, 4.0, 20.0, 1.0, 1)]
    inst = _inst(pts, fleet)
    incumbent = _sol(inst, [(0, 1, [(c, 1.0) for c in range(1, 5)])])
    better = _sol(inst, [(0, 0, [(1, 1.0), (2, 1.0)]),
                         (0, 0, [(3, 1.0), (4, 1.0)])])
    best = _sol(inst, [(0, 0, [(1, 1.0), (4, 1.0)]),
                       (0, 0, [(2, 1.0), (3, 1.0)])])
    assert best.objective < better.objective < incumbent.objective

    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, better, math.inf)
    polished = []

    def callback(sol):
        polished.append(sol.objective)
        return best

    out, pool = SP.solve_sp(pool, incumbent, SolverParams(tmax=5.0), callback)
    assert polished  # the exact solve produced an incumbent to polish
    assert out.objective == pytest.approx(best.objective)
    assert pool.permanent_count() == len(pool)  # temporaries gone


def test_solve_sp_skips_oversized_sd_pools(monkeypatch):
    fleet = [VehicleType(0, 4.0, 0.0, 1.0, None)]
    inst = _inst([(0, 0), (1, 0), (2, 0)], fleet, demands=[2.0, 2.0],
                 attrs=AttributeSet(split_delivery=True))
    rich = _sol(inst, [(0, 0, [(1, 2.0), (2, 2.0)])])
    poor = _sol(inst, [(0, 0, [(1, 1.0)]), (0, 0, [(1, 1.0), (2, 2.0)])])
    pool = SP.RoutePool(inst)
    SP.add_temporary_routes(pool, rich, math.inf)
    SP.add_temporary_routes(pool, poor, math.inf)
    monkeypatch.setattr(SP, "SD_EXACT_LIMIT", 2)
    out, pool = SP.solve_sp(pool, poor, SolverParams(tmax=5.0))
    assert out is poor  # too many columns for the exact pass, left alone
