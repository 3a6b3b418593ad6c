"""Constant-time move evaluation: sequence statistics and their concatenation.

A visit sequence is summarized by a small value type carrying distance, load,
duration, the earliest/latest feasible start of service at its first node, and
the accumulated time warp (the penalized "return in time" used to relax late
arrivals).  Concatenating two summaries costs O(1), so any classical move can
be priced as a handful of concatenations of preserved subsequences.

Load is tracked as a (deliver, pickup, peak) triple so the same O(1) check
covers plain deliveries, strict backhauls and mixed backhauls: `peak` is the
maximum on-board load over the whole span, with deliveries aboard from the
start and pickups accumulating.  A compatibility bitmask over vehicle types is
carried along (intersection under concatenation) so site restrictions are also
an O(1) filter.
"""

from __future__ import annotations

from typing import NamedTuple

from .model import BACKHAUL, DEPOT, Instance, VehicleType


class SeqStat(NamedTuple):
    dist: float     # accumulated arc length
    load: float     # total demand weight (deliveries + pickups)
    dur: float      # duration incl. service and forced waiting
    early: float    # earliest feasible start of service at first node
    late: float     # latest feasible start of service at first node
    tw: float       # accumulated time warp
    deliver: float  # delivery weight aboard at the start
    pickup: float   # pickup weight aboard at the end
    peak: float     # max on-board load over the span
    compat: int     # bitmask of vehicle types compatible with every visit


def seq_singleton(inst: Instance, node_id: int, quantity: float | None = None) -> SeqStat:
    """Summary of a one-node sequence; `quantity` overrides the demand when a
    split delivery serves only part of it."""
    node = inst.nodes[node_id]
    q = node.demand if quantity is None else quantity
    if node.role == DEPOT:
        deliver = pickup = 0.0
    elif node.role == BACKHAUL:
        deliver, pickup = 0.0, q
    else:
        deliver, pickup = q, 0.0
    mask = inst.all_types_mask if node.role == DEPOT else inst.compat_mask(node_id)
    return SeqStat(
        dist=0.0, load=deliver + pickup, dur=node.service,
        early=node.tw_early, late=node.tw_late, tw=0.0,
        deliver=deliver, pickup=pickup, peak=q,
        compat=mask,
    )


def seq_concat(s1: SeqStat, s2: SeqStat, d_link: float) -> SeqStat:
    """Summary of s1 followed by s2 with an arc of length d_link between them.

    Time fields follow the time-warp relaxation: delta is the net time offset
    of s2's schedule relative to s1's start, delta_wt is waiting induced at the
    junction, delta_tw is warp induced when s2 can no longer start in time.
    """
    delta = s1.dur - s1.tw + d_link
    delta_wt = s2.early - delta - s1.late
    if delta_wt < 0.0:
        delta_wt = 0.0
    delta_tw = s1.early + delta - s2.late
    if delta_tw < 0.0:
        delta_tw = 0.0
    e = s2.early - delta
    if s1.early > e:
        e = s1.early
    l = s2.late - delta
    if s1.late < l:
        l = s1.late
    return SeqStat(
        dist=s1.dist + d_link + s2.dist,
        load=s1.load + s2.load,
        dur=s1.dur + d_link + s2.dur + delta_wt,
        early=e - delta_wt,
        late=l + delta_tw,
        tw=s1.tw + s2.tw + delta_tw,
        deliver=s1.deliver + s2.deliver,
        pickup=s1.pickup + s2.pickup,
        peak=max(s1.peak + s2.deliver, s2.peak + s1.pickup),
        compat=s1.compat & s2.compat,
    )


def route_stat(inst: Instance, depot: int, visits, open_route: bool | None = None) -> SeqStat:
    """Fold of seq_concat over depot + visits (+ terminal depot).

    Route costs everywhere else in the package always include the terminal
    depot: for open-route instances the arcs into depots are zeroed at load
    time and depot windows are wide, so this is cost-neutral and keeps the
    evaluator uniform.  Passing open_route=True omits the terminal depot from
    the returned schedule fields.
    """
    if open_route is None:
        open_route = False
    dist = inst.dist
    stat = seq_singleton(inst, depot)
    last = depot
    for c, qty in visits:
        stat = seq_concat(stat, seq_singleton(inst, c, qty), dist[last][c])
        last = c
    if not open_route:
        stat = seq_concat(stat, seq_singleton(inst, depot), dist[last][depot])
    return stat


def route_cost(stat: SeqStat, vt: VehicleType, omega: float) -> float:
    """Penalized cost of a route with the given summary on vehicle type vt."""
    return vt.fixed_cost + vt.var_cost * stat.dist + omega * stat.tw


def capacity_filter(stat: SeqStat, vt: VehicleType, inst: Instance) -> bool:
    """True iff the hard constraints pass for vt: peak load, distance or
    duration limit, and site compatibility.  Moves failing this are skipped
    before any costing."""
    if stat.peak > vt.capacity + 1e-9:
        return False
    if vt.is_extra:
        # the overflow vehicle is the dumping ground for customers nothing
        # else can host; only its (huge) capacity binds
        return True
    if inst.duration_limit is not None:
        used = stat.dist if inst.limit_on == "distance" else stat.dur
        if used > inst.duration_limit + 1e-9:
            return False
    k = inst.type_index[vt.id]
    return bool((stat.compat >> k) & 1)
