"""Batch experiment harness: seeded runs over a manifest, gap tables against
the best-known-solution registry, and the time-warp penalty sweep."""

from __future__ import annotations

import csv
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .ils import RunReport, hils
from .instance_io import (ParseError, apply_variant, bks_lookup, read_classic,
                          read_instance)
from .model import SolverParams

DEFAULT_SEEDS = tuple(range(1, 11))

# manifest key -> SolverParams field
_PARAM_KEYS = {
    "ims": ("ims", int),
    "iils": ("iils_base", int),
    "tmax": ("tmax", float),
    "rgap": ("rgap_max", float),
    "omega": ("omega", float),
    "cns": ("cns_mode", str),
    "sp": ("sp_enabled", None),      # on/off
    "merge": ("merge_perturbation", None),
    "wall": ("wall_limit", float),
    "nlarge": ("n_large", int),
}


def _parse_bool(tok):
    t = tok.strip().lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise ParseError(f"expected on/off, got {tok!r}")


def _parse_seeds(tok):
    if ".." in tok:
        lo, hi = tok.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(t) for t in tok.split(",") if t)


@dataclass
class Job:
    path: str
    variant: str | None = None
    fmt: str | None = None           # classic format tag; None = canonical file
    seeds: tuple = DEFAULT_SEEDS
    overrides: dict = field(default_factory=dict)
    bks: float | None = None         # explicit override; None = registry


@dataclass
class GapRow:
    instance: str
    variant: str
    bks: float | None
    best: float
    best_gap: float | None           # percent; None when no BKS
    avg: float
    avg_gap: float | None
    avg_time: float
    runs: int
    feasible_runs: int

    @property
    def flagged(self) -> bool:
        return self.bks is None


@dataclass
class GapTable:
    rows: list
    aggregates: dict
    reports: list


def parse_manifest(source, base_dir=None) -> list[Job]:
    """Line grammar: `<instance-path> [variant] [key=value ...]`.

    Keys: fmt, seeds (`1..10` or `2,4,6`), bks, and solver overrides
    ims/iils/tmax/rgap/omega/cns/sp/merge/wall/nlarge.  `#` starts a comment.
    """
    if isinstance(source, str) and "\n" not in source and os.path.exists(source):
        base_dir = base_dir or os.path.dirname(os.path.abspath(source))
        with open(source) as fh:
            lines = fh.readlines()
    else:
        lines = source.splitlines() if isinstance(source, str) else list(source)
    jobs = []
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        job = Job(path=toks[0])
        rest = toks[1:]
        if rest and "=" not in rest[0]:
            tag = rest.pop(0)
            job.variant = None if tag in ("plain", "-") else tag
        for tok in rest:
            if "=" not in tok:
                raise ParseError(f"manifest line {ln}: bad token {tok!r}")
            key, val = tok.split("=", 1)
            if key == "fmt":
                job.fmt = val
            elif key == "seeds":
                job.seeds = _parse_seeds(val)
            elif key == "bks":
                job.bks = float(val)
            elif key in _PARAM_KEYS:
                fieldname, conv = _PARAM_KEYS[key]
                job.overrides[fieldname] = _parse_bool(val) if conv is None else conv(val)
            else:
                raise ParseError(f"manifest line {ln}: unknown key {key!r}")
        if base_dir and not os.path.isabs(job.path):
            cand = os.path.join(base_dir, job.path)
            if os.path.exists(cand):
                job.path = cand
        jobs.append(job)
    return jobs


def _load_instance(path, fmt):
    if fmt:
        return read_classic(path, fmt)
    return read_instance(path)


def _run_task(task):
    path, fmt, variant, overrides, seed = task
    inst = _load_instance(path, fmt)
    if variant:
        inst = apply_variant(inst, variant)
    params = SolverParams(seed=seed, **overrides)
    _, report = hils(inst, params, variant=variant or "plain")
    return report


def _instance_label(path):
    return os.path.splitext(os.path.basename(path))[0]


def gap_table_from_reports(reports, bks_overrides=None, bks_path=None) -> GapTable:
    """Aggregate raw reports into per-(instance, variant) gap rows.  Rows
    without a registry value are flagged and left out of the aggregates."""
    groups = {}
    for rep in reports:
        groups.setdefault((rep.instance, rep.variant), []).append(rep)
    rows = []
    for (name, variant), reps in sorted(groups.items()):
        bks = None
        if bks_overrides and (name, variant) in bks_overrides:
            bks = bks_overrides[(name, variant)]
        if bks is None:
            bks = bks_lookup(name, variant, path=bks_path)
        objs = [r.objective for r in reps]
        best = min(objs)
        avg = statistics.fmean(objs)
        row = GapRow(
            instance=name, variant=variant, bks=bks, best=best,
            best_gap=None if bks is None else 100.0 * (best - bks) / bks,
            avg=avg,
            avg_gap=None if bks is None else 100.0 * (avg - bks) / bks,
            avg_time=statistics.fmean(r.wall_time for r in reps),
            runs=len(reps),
            feasible_runs=sum(1 for r in reps if r.feasible),
        )
        rows.append(row)
    scored = [r for r in rows if not r.flagged]
    aggregates = {
        "rows": len(rows),
        "scored_rows": len(scored),
        "flagged_rows": len(rows) - len(scored),
        "avg_best_gap": statistics.fmean(r.best_gap for r in scored) if scored else None,
        "avg_avg_gap": statistics.fmean(r.avg_gap for r in scored) if scored else None,
        "avg_time": statistics.fmean(r.avg_time for r in rows) if rows else None,
    }
    return GapTable(rows=rows, aggregates=aggregates, reports=list(reports))


def run_experiment(manifest, jobs=1, out_dir=None, progress=None) -> GapTable:
    """Run every (manifest line, seed) combination and aggregate gaps.

    `manifest` is a path or the manifest text itself.  Deterministic per
    seed: objectives bit-reproduce across reruns, times do not.
    """
    job_list = manifest if isinstance(manifest, list) else parse_manifest(manifest)
    tasks = []
    overrides_bks = {}
    for job in job_list:
        label = _instance_label(job.path)
        variant = job.variant or "plain"
        if job.bks is not None:
            overrides_bks[(label, variant)] = job.bks
        for seed in job.seeds:
            tasks.append((job.path, job.fmt, job.variant, job.overrides, seed))
    reports = []
    if jobs <= 1:
        for task in tasks:
            rep = _run_task(task)
            reports.append(rep)
            if progress:
                progress(rep)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rep in pool.map(_run_task, tasks):
                reports.append(rep)
                if progress:
                    progress(rep)
    # stable output order regardless of worker scheduling
    reports.sort(key=lambda r: (r.instance, r.variant, r.seed))
    table = gap_table_from_reports(reports, bks_overrides=overrides_bks)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_reports_csv(reports, os.path.join(out_dir, "runs.csv"))
        with open(os.path.join(out_dir, "gaps.txt"), "w") as fh:
            fh.write(render_gap_table(table))
    return table


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "variant", "seed", "objective", "wall_time",
                    "feasible", "fleet", "trace"])
        for r in reports:
            fleet = ";".join(f"{k}:{v}" for k, v in sorted(r.fleet.items()))
            trace = "|".join(f"{i}:{obj!r}:{t:.2f}" for i, obj, t in r.trace)
            w.writerow([r.instance, r.variant, r.seed, repr(r.objective),
                        f"{r.wall_time:.3f}", int(r.feasible), fleet, trace])


def read_reports_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace = []
            if row["trace"]:
                for part in row["trace"].split("|"):
                    i, obj, t = part.split(":")
                    trace.append((int(i), float(obj), float(t)))
            fleet = {}
            if row["fleet"]:
                for part in row["fleet"].split(";"):
                    k, v = part.split(":")
                    fleet[int(k)] = int(v)
            out.append(RunReport(
                instance=row["instance"], variant=row["variant"],
                seed=int(row["seed"]), objective=float(row["objective"]),
                wall_time=float(row["wall_time"]),
                feasible=bool(int(row["feasible"])), fleet=fleet, trace=trace))
    return out


def _num(x, digits=2):
    return "--" if x is None else f"{x:.{digits}f}"


def render_gap_table(table: GapTable) -> str:
    """Plain-text table in the appendix column order: best solution and gap,
    then average solution and gap, then time."""
    header = (f"{'Instance':<14} {'Variant':<12} {'BKS':>10} {'Best':>10} "
              f"{'Gap%':>7} {'Avg':>10} {'AvgGap%':>8} {'T(s)':>7}")
    lines = [header, "-" * len(header)]
    for r in table.rows:
        mark = "  (no BKS)" if r.flagged else ""
        lines.append(
            f"{r.instance:<14} {r.variant:<12} {_num(r.bks):>10} {r.best:>10.2f} "
            f"{_num(r.best_gap):>7} {r.avg:>10.2f} {_num(r.avg_gap):>8} "
            f"{r.avg_time:>7.1f}{mark}")
    agg = table.aggregates
    lines.append("-" * len(header))
    lines.append(f"scored rows: {agg['scored_rows']}/{agg['rows']}   "
                 f"avg best gap: {_num(agg['avg_best_gap'])}%   "
                 f"avg gap: {_num(agg['avg_avg_gap'])}%   "
                 f"avg time: {_num(agg['avg_time'], 1)}s")
    return "\n".join(lines) + "\n"


def _omega_task(task):
    ref, omega, seed, base = task
    if isinstance(ref, tuple):
        path, fmt, variant = ref
        inst = _load_instance(path, fmt)
        if variant:
            inst = apply_variant(inst, variant)
    else:
        inst = ref
    params = replace(base, omega=omega, seed=seed)
    _, rep = hils(inst, params)
    return inst.name, omega, rep.feasible


def omega_calibration(instances, grid=(1.0, 10.0, 100.0, 1000.0),
                      seeds=DEFAULT_SEEDS, base_params=None, jobs=1):
    """Fraction of runs ending time-window feasible for each penalty weight.

    `instances` is a list of Instance objects or (path, fmt, variant) tuples.
    Returns (rows, per_instance): rows is a list of (omega, rate) in grid
    order; per_instance maps (instance name, omega) -> rate.
    """
    base = base_params or SolverParams()
    tasks = []
    for ref in instances:
        for omega in grid:
            for seed in seeds:
                tasks.append((ref, float(omega), seed, base))

    # Instance objects are not picklable across workers; run those serially.
    if jobs <= 1 or any(not isinstance(t[0], tuple) for t in tasks):
        outcomes = [_omega_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_omega_task, tasks))

    by_omega = {}
    by_pair = {}
    for name, omega, ok in outcomes:
        by_omega.setdefault(omega, []).append(ok)
        by_pair.setdefault((name, omega), []).append(ok)
    rows = [(omega, statistics.fmean(map(float, by_omega[omega])))
            for omega in map(float, grid)]
    per_instance = {k: statistics.fmean(map(float, v)) for k, v in by_pair.items()}
    return rows, per_instance
