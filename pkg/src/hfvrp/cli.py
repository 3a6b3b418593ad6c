"""Command-line front door: solve one instance, validate a solution file,
convert classic benchmark layouts, run a benchmark manifest."""

import argparse
import os
import sys

from .bench import render_gap_table, run_experiment
from .ils import hils
from .instance_io import (
    CLASSIC_FORMATS,
    VARIANTS,
    ParseError,
    apply_variant,
    bks_lookup,
    read_classic,
    read_instance,
    read_solution,
    write_instance,
    write_solution,
)
from .model import (
    SolverParams,
    hard_violations,
    recompute_objective,
    validate_solution,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3

_D = SolverParams()   # published defaults, echoed by --print-params


def _onoff(v):
    return v == "on"


def _load(path, fmt, variant):
    inst = read_classic(path, fmt) if fmt else read_instance(path)
    if variant and variant != "plain":
        inst = apply_variant(inst, variant)
    return inst


def _params_from(args):
    return SolverParams(
        ims=args.ims, iils_base=args.iils, tmax=args.tmax,
        rgap_max=args.rgap, omega=args.omega, seed=args.seed,
        cns_mode=args.cns, merge_perturbation=_onoff(args.merge),
        sp_enabled=_onoff(args.sp))


def _print_params(params, variant):
    iils = "auto" if params.iils_base is None else params.iils_base
    print(f"variant={variant} seed={params.seed} ims={params.ims} "
          f"iils={iils} tmax={params.tmax} rgap={params.rgap_max} "
          f"omega={params.omega} cns={params.cns_mode} "
          f"merge={'on' if params.merge_perturbation else 'off'} "
          f"sp={'on' if params.sp_enabled else 'off'}")


def cmd_solve(args):
    inst = _load(args.instance, args.fmt, args.variant)
    params = _params_from(args)
    if args.print_params:
        _print_params(params, args.variant)
    if params.cns_mode == "pda" and len(inst.customers) > 100:
        print(f"warning: pda fleet search is exhaustive per neighborhood and "
              f"gets expensive beyond 100 customers (this instance has "
              f"{len(inst.customers)})", file=sys.stderr)
    sol, rep = hils(inst, params, variant=args.variant)
    stem = os.path.splitext(os.path.basename(args.instance))[0]
    out = args.out or f"{stem}-{args.variant}-s{args.seed}.sol"
    write_solution(inst, sol, out)
    fleet = " ".join(f"type{k}x{v}" for k, v in sorted(rep.fleet.items()))
    print(f"{inst.name} {args.variant} seed {args.seed}: "
          f"objective {rep.objective:.2f} in {rep.wall_time:.1f}s "
          f"({fleet or 'no vehicles'}) -> {out}")
    bks = bks_lookup(inst.name, args.variant)
    if bks:
        print(f"registry best {bks:.2f}, gap "
              f"{100.0 * (rep.objective - bks) / bks:+.2f}%")
    if not sol.feasible:
        # the solution may reference the synthetic overflow type the search
        # appends to fixed fleets; validate against the extended instance
        vinst = inst
        if any(k not in inst.type_index for k in sol.fleet_used):
            vinst = inst.with_extra_vehicle()
        for v in validate_solution(vinst, sol):
            print(f"infeasible: {v.kind}: {v.detail}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_validate(args):
    inst = _load(args.instance, args.fmt, args.variant)
    sol = read_solution(inst, args.solution)
    report = validate_solution(inst, sol)
    for v in report:
        where = "solution" if v.route_index < 0 else f"route {v.route_index}"
        kind = v.kind if v.hard else f"{v.kind} (soft)"
        print(f"{kind}: {where}: {v.detail}")
    recomputed = recompute_objective(inst, sol, 0.0)
    mismatch = abs(recomputed - sol.objective) > 1e-6
    if mismatch:
        print(f"objective mismatch: file says {sol.objective!r}, "
              f"recomputed {recomputed!r}")
    if report or mismatch:
        return EXIT_PARSE
    print(f"clean: objective {recomputed:.2f}, "
          f"{len([r for r in sol.routes if r.visits])} routes")
    return EXIT_OK


def cmd_convert(args):
    inst = _load(args.instance, args.fmt, None)
    stem = os.path.splitext(os.path.basename(args.instance))[0]
    out = args.out or f"{stem}.hfv"
    write_instance(inst, out)
    print(f"{inst.name}: {len(inst.depots)} depot(s), "
          f"{len(inst.customers)} customers, {len(inst.fleet)} types -> {out}")
    return EXIT_OK


def cmd_bench(args):
    table = run_experiment(args.manifest, jobs=args.jobs, out_dir=args.out)
    print(render_gap_table(table), end="")
    return EXIT_OK


def _add_solver_flags(p):
    p.add_argument("--seed", type=int, default=_D.seed)
    p.add_argument("--ims", type=int, default=_D.ims,
                   help="restarts (multi-start budget)")
    p.add_argument("--iils", type=int, default=_D.iils_base,
                   help="perturbations without improvement per restart "
                        "(default: scaled from instance size)")
    p.add_argument("--tmax", type=float, default=_D.tmax,
                   help="set-partitioning time budget, seconds")
    p.add_argument("--rgap", type=float, default=_D.rgap_max,
                   help="root-gap ceiling for accepting partial SP solves")
    p.add_argument("--omega", type=float, default=_D.omega,
                   help="time-warp penalty weight")
    p.add_argument("--cns", choices=("off", "sfr", "pda"), default=_D.cns_mode,
                   help="joint route/fleet re-assignment mode")
    p.add_argument("--merge", choices=("on", "off"),
                   default="on" if _D.merge_perturbation else "off",
                   help="route-merge moves inside the perturbation mix")
    p.add_argument("--sp", choices=("on", "off"),
                   default="on" if _D.sp_enabled else "off",
                   help="set-partitioning phase over pooled routes")
    p.add_argument("--print-params", action="store_true",
                   help="echo the effective parameter set")


def build_parser():
    p = argparse.ArgumentParser(
        prog="hfvrp",
        description="Heterogeneous-fleet VRP solver "
                    "(multi-start ILS with a set-partitioning phase)")
    sub = p.add_subparsers(dest="cmd", required=True)
    variants = ["plain"] + sorted(VARIANTS)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("--instance", required=True)
    s.add_argument("--fmt", choices=CLASSIC_FORMATS,
                   help="classic layout of the input; omit for canonical")
    s.add_argument("--variant", choices=variants, default="plain")
    s.add_argument("--out", help="solution file path")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="check a solution file")
    v.add_argument("--instance", required=True)
    v.add_argument("--fmt", choices=CLASSIC_FORMATS)
    v.add_argument("--variant", choices=variants, default="plain")
    v.add_argument("--solution", required=True)
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("convert", help="rewrite an instance in canonical form")
    c.add_argument("--instance", required=True)
    c.add_argument("--fmt", choices=CLASSIC_FORMATS,
                   help="input layout; omit if already canonical")
    c.add_argument("--out")
    c.set_defaults(func=cmd_convert)

    b = sub.add_parser("bench", help="run a benchmark manifest")
    b.add_argument("--manifest", required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", help="directory for runs.csv and gaps.txt")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
