"""Sequence-statistic algebra against the independent timeline oracle."""

import random

import pytest
from hypothesis import given, strategies as st

from hfvrp.evaluation import (
    SeqStat,
    capacity_filter,
    route_cost,
    route_stat,
    seq_concat,
    seq_singleton,
)
from hfvrp.model import (
    BACKHAUL,
    DEPOT,
    LINEHAUL,
    AttributeSet,
    Instance,
    Node,
    VehicleType,
)

import helpers
import oracles


def two_node_instance(j_early, j_late):
    nodes = [
        Node(0, 0, 0, 0.0, 0.0, 1e6, 0.0, DEPOT),
        Node(1, 0, 0, 5.0, 0.0, 10.0, 2.0, LINEHAUL),
        Node(2, 3, 4, 3.0, j_early, j_late, 2.0, LINEHAUL),
    ]
    dist = [[0.0, 1.0, 1.0], [1.0, 0.0, 5.0], [1.0, 5.0, 0.0]]
    fleet = [VehicleType(0, 100.0, 0.0, 1.0, None)]
    return Instance("pair", nodes, [0], [1, 2], dist, fleet, AttributeSet())


def test_singleton_fields():
    inst = two_node_instance(20.0, 30.0)
    s = seq_singleton(inst, 1)
    assert s.dist == 0.0
    assert s.load == 5.0 and s.deliver == 5.0 and s.pickup == 0.0 and s.peak == 5.0
    assert s.dur == 2.0
    assert s.early == 0.0 and s.late == 10.0 and s.tw == 0.0

    d = seq_singleton(inst, 0)
    assert d.load == 0.0 and d.peak == 0.0 and d.dur == 0.0
    assert d.compat == inst.all_types_mask


def test_singleton_backhaul_and_split_quantity():
    nodes = [
        Node(0, 0, 0, 0.0, 0.0, 1e6, 0.0, DEPOT),
        Node(1, 1, 1, 5.0, 0.0, 1e6, 0.0, BACKHAUL),
    ]
    dist = [[0.0, 1.0], [1.0, 0.0]]
    inst = Instance("b", nodes, [0], [1], dist,
                    [VehicleType(0, 10.0, 0.0, 1.0, None)],
                    AttributeSet(backhaul_mixed=True))
    s = seq_singleton(inst, 1)
    assert s.deliver == 0.0 and s.pickup == 5.0 and s.peak == 5.0
    part = seq_singleton(inst, 1, quantity=2.0)
    assert part.pickup == 2.0 and part.load == 2.0 and part.peak == 2.0


def test_concat_forced_waiting():
    # service 2 then a 5 long arc into a window opening at 20: the link
    # offset is 7, so 3 units of waiting are forced and the pair can only
    # start at 10
    inst = two_node_instance(20.0, 30.0)
    s = seq_concat(seq_singleton(inst, 1), seq_singleton(inst, 2), 5.0)
    assert s.dist == 5.0
    assert s.dur == pytest.approx(12.0, abs=1e-12)
    assert s.tw == 0.0
    assert s.early == pytest.approx(10.0, abs=1e-12)
    assert s.late == pytest.approx(10.0, abs=1e-12)
    dur, warp = oracles.simulate_schedule(inst, [1, 2], 10.0)
    assert dur == pytest.approx(12.0) and warp == 0.0


def test_concat_forced_warp():
    # same pair but the second window closes at 4: arrival at 7 is 3 late
    inst = two_node_instance(0.0, 4.0)
    s = seq_concat(seq_singleton(inst, 1), seq_singleton(inst, 2), 5.0)
    assert s.tw == pytest.approx(3.0, abs=1e-12)
    assert s.dur == pytest.approx(9.0, abs=1e-12)
    assert s.early == 0.0 and s.late == 0.0
    dur, warp = oracles.simulate_schedule(inst, [1, 2], 0.0)
    assert dur == pytest.approx(9.0) and warp == pytest.approx(3.0)


def mixed_backhaul_instance(capacity):
    nodes = [
        Node(0, 0, 0, 0.0, 0.0, 1e6, 0.0, DEPOT),
        Node(1, 1, 0, 2.0, 0.0, 1e6, 0.0, LINEHAUL),
        Node(2, 2, 0, 4.0, 0.0, 1e6, 0.0, BACKHAUL),
        Node(3, 3, 0, 4.0, 0.0, 1e6, 0.0, LINEHAUL),
        Node(4, 4, 0, 2.0, 0.0, 1e6, 0.0, BACKHAUL),
    ]
    n = len(nodes)
    dist = [[abs(i - j) for j in range(n)] for i in range(n)]
    fleet = [VehicleType(0, capacity, 0.0, 1.0, None)]
    return Instance("mb", nodes, [0], [1, 2, 3, 4], dist, fleet,
                    AttributeSet(backhaul_mixed=True))


def test_mixed_backhaul_peak():
    # deliver 2, pick 4, deliver 4, pick 2: on-board trace 6,4,8,4,6
    inst = mixed_backhaul_instance(6.0)
    visits = [(1, 2.0), (2, 4.0), (3, 4.0), (4, 2.0)]
    stat = route_stat(inst, 0, visits)
    assert stat.deliver == 6.0 and stat.pickup == 6.0
    assert stat.peak == pytest.approx(8.0)
    assert not capacity_filter(stat, inst.fleet[0], inst)
    roomier = mixed_backhaul_instance(8.0)
    stat2 = route_stat(roomier, 0, visits)
    assert capacity_filter(stat2, roomier.fleet[0], roomier)
    assert oracles.load_profile(inst, visits) == (6.0, 6.0, 8.0)


def test_route_cost_affine():
    stat = SeqStat(dist=40.0, load=5.0, dur=50.0, early=0.0, late=1.0, tw=2.5,
                   deliver=5.0, pickup=0.0, peak=5.0, compat=1)
    vt = VehicleType(0, 10.0, 100.0, 1.5, None)
    assert route_cost(stat, vt, 1000.0) == pytest.approx(100.0 + 60.0 + 2500.0)
    assert route_cost(stat, vt, 0.0) == pytest.approx(160.0)


def test_capacity_filter_limits_and_site():
    rng = random.Random(7)
    attrs = AttributeSet(site_dependency=True, route_duration=True)
    inst = helpers.random_instance(rng, n_customers=6, attrs=attrs, n_types=2)
    c = inst.customers[0]
    stat = route_stat(inst, 0, [(c, inst.nodes[c].demand)])
    for vt in inst.fleet:
        expected = (vt.allows(c)
                    and stat.peak <= vt.capacity + 1e-9
                    and (stat.dist if inst.limit_on == "distance" else stat.dur)
                    <= inst.duration_limit + 1e-9)
        assert capacity_filter(stat, vt, inst) == expected


def test_open_route_distance_convention():
    rng = random.Random(11)
    inst = helpers.random_instance(rng, n_customers=5,
                                   attrs=AttributeSet(open_routes=True))
    visits = helpers.random_visits(rng, inst, max_len=4)
    closed = route_stat(inst, 0, visits)
    open_stat = route_stat(inst, 0, visits, open_route=True)
    # the return arc is zeroed at load time, so both agree on distance
    assert closed.dist == pytest.approx(open_stat.dist)
    legs = [0] + [c for c, _ in visits]
    want = sum(inst.raw_dist[a][b] for a, b in zip(legs, legs[1:]))
    assert open_stat.dist == pytest.approx(want)


def test_strict_backhaul_penalty_arcs():
    rng = random.Random(3)
    inst = helpers.random_instance(rng, n_customers=8,
                                   attrs=AttributeSet(backhaul_strict=True))
    assert inst.backhauls and inst.linehauls
    b = inst.backhauls[0]
    l = inst.linehauls[0]
    stat = route_stat(inst, 0, [(b, inst.nodes[b].demand),
                                (l, inst.nodes[l].demand)])
    assert stat.dist > 1e6  # depot->backhaul and backhaul->linehaul both pay
    ok = route_stat(inst, 0, [(l, inst.nodes[l].demand),
                              (b, inst.nodes[b].demand)])
    assert ok.dist < 1e6


def test_stat_matches_simulation_across_attribute_space():
    rng = random.Random(2024)
    checked = 0
    for attrs in helpers.all_attribute_sets():
        inst = helpers.random_instance(rng, n_customers=9, attrs=attrs)
        for depot in inst.depots:
            for _ in range(3):
                visits = helpers.random_visits(rng, inst)
                errs = oracles.check_route_fields(
                    inst, depot, visits, bisect=(checked % 7 == 0))
                assert not errs, (attrs, visits, errs)
                checked += 1
    assert checked >= 400


def test_concat_equals_fold_at_every_split():
    # stitching any prefix/suffix pair must reproduce the full-route summary
    rng = random.Random(99)
    for _ in range(40):
        attrs = rng.choice(helpers.all_attribute_sets())
        inst = helpers.random_instance(rng, n_customers=8, attrs=attrs)
        visits = helpers.random_visits(rng, inst, max_len=7)
        depot = inst.depots[0]
        seq = [(depot, None)] + list(visits) + [(depot, None)]
        stats = [seq_singleton(inst, c, q) for c, q in seq]
        full = route_stat(inst, depot, visits)
        for cut in range(1, len(stats)):
            left = stats[0]
            prev = seq[0][0]
            for (c, _), s in zip(seq[1:cut], stats[1:cut]):
                left = seq_concat(left, s, inst.dist[prev][c])
                prev = c
            right = stats[cut]
            rprev = seq[cut][0]
            for (c, _), s in zip(seq[cut + 1:], stats[cut + 1:]):
                right = seq_concat(right, s, inst.dist[rprev][c])
                rprev = c
            joined = seq_concat(left, right, inst.dist[prev][seq[cut][0]])
            for a, b in zip(joined[:9], full[:9]):
                assert a == pytest.approx(b, abs=1e-9)
            assert joined.compat == full.compat


@given(st.integers(min_value=0, max_value=10_000))
def test_concat_growth_properties(seed):
    rng = random.Random(seed)
    attrs = rng.choice(helpers.all_attribute_sets())
    inst = helpers.random_instance(rng, n_customers=6, attrs=attrs)
    v1 = helpers.random_visits(rng, inst, max_len=3)
    v2 = [v for v in helpers.random_visits(rng, inst, max_len=3) if v not in v1]
    if not v2:
        return
    depot = inst.depots[0]
    s1 = route_stat(inst, depot, v1, open_route=True)
    s2 = seq_singleton(inst, v2[0][0], v2[0][1])
    prev = v2[0][0]
    for c, q in v2[1:]:
        s2 = seq_concat(s2, seq_singleton(inst, c, q), inst.dist[prev][c])
        prev = c
    d = inst.dist[v1[-1][0]][v2[0][0]]
    s = seq_concat(s1, s2, d)
    assert s.dist == pytest.approx(s1.dist + d + s2.dist)
    assert s.load == pytest.approx(s1.load + s2.load)
    assert s.tw >= s1.tw + s2.tw - 1e-12          # warp only accumulates
    assert s.dur >= s1.dur + d + s2.dur - 1e-12   # waiting only adds
    assert s.peak >= max(s1.peak, s2.peak) - 1e-12
    assert s.compat == s1.compat & s2.compat
