"""Top-level search loops.

One run is a series of restarts.  Each restart improves a fresh construction
by alternating perturbation with local search, feeding every local optimum
into the route pool; the pooled routes are then recombined exactly, after
every restart on large instances and once at the end otherwise.
"""

import math
import random
import time
from dataclasses import dataclass, field

from .construct import build_initial
from .model import SolverParams
from .perturb import perturb
from .search import rvnd
from .setpart import RoutePool, add_temporary_routes, solve_sp

_FLAG_NAMES = ("multi_depot", "time_windows", "backhaul_strict",
               "backhaul_mixed", "site_dependency", "split_delivery",
               "route_duration", "open_routes", "asymmetric")


def _attr_tag(attrs):
    on = [f for f in _FLAG_NAMES if getattr(attrs, f)]
    return "+".join(on) if on else "plain"


@dataclass
class RunReport:
    instance: str
    variant: str
    seed: int
    objective: float = math.inf
    wall_time: float = 0.0
    feasible: bool = False
    fleet: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)  # (restart, objective, elapsed)


def ils_rvnd(inst, s0, i_ils, pool, omega=1000.0, rng=None, params=None,
             cns_mode=None, deadline=None):
    """Improve s0 until i_ils consecutive perturbation rounds fail to beat
    the reference strictly.  Every local optimum feeds the pool, gated by
    the best objective the pool has seen."""
    if rng is None:
        rng = random.Random(0)
    if params is None:
        params = SolverParams(omega=omega)
    if cns_mode is None:
        cns_mode = params.cns_mode

    best = rvnd(inst, s0, omega, rng, cns_mode)
    add_temporary_routes(pool, best, pool.f_ref)
    fails = 0
    while fails < i_ils:
        if deadline is not None and time.perf_counter() > deadline:
            break
        cand = perturb(inst, best, rng, params)
        cand = rvnd(inst, cand, omega, rng, cns_mode)
        add_temporary_routes(pool, cand, pool.f_ref)
        if cand.objective < best.objective:
            best = cand
            fails = 0
        else:
            fails += 1
    return best, pool


def _fleet_size(inst, s0):
    counts = [vt.count for vt in inst.fleet if not vt.is_extra]
    if any(c is None for c in counts):
        # nothing to sum on an open-ended fleet; use the routes the
        # construction actually opened
        return max(1, len(s0.counted_routes()))
    return max(1, sum(counts))


def hils(inst, params=None, variant=None):
    """Full multi-start run.  Returns (best solution, report)."""
    if params is None:
        params = SolverParams()
    rng = random.Random(params.seed)
    omega = params.omega
    t0 = time.perf_counter()
    deadline = t0 + params.wall_limit if params.wall_limit else None

    report = RunReport(instance=inst.name,
                       variant=variant or _attr_tag(inst.attributes),
                       seed=params.seed)
    n = len(inst.customers)
    pool = None
    best = None
    i_ils = params.iils_base

    for i in range(1, params.ims + 1):
        s0, inst = build_initial(inst, rng, omega)
        if pool is None:
            pool = RoutePool(inst)
        if i_ils is None:
            i_ils = n + 5 * _fleet_size(inst, s0)

        cur, pool = ils_rvnd(inst, s0, i_ils, pool, omega, rng, params,
                             params.cns_mode, deadline)

        last = (i == params.ims
                or (deadline is not None and time.perf_counter() > deadline))
        if params.sp_enabled and (n >= params.n_large or last):
            def polish(sol):
                return ils_rvnd(inst, sol, i_ils, pool, omega, rng, params,
                                params.cns_mode, deadline)[0]
            cur, pool = solve_sp(pool, cur, params, polish)

        if best is None or cur.objective < best.objective:
            best = cur
            if best.objective < pool.f_ref:
                pool.f_ref = best.objective
        report.trace.append((i, cur.objective, time.perf_counter() - t0))
        if last:
            break

    report.objective = best.objective
    report.wall_time = time.perf_counter() - t0
    report.feasible = best.feasible
    report.fleet = {k: c for k, c in best.fleet_used.items() if c > 0}
    return best, report
