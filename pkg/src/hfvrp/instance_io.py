"""Instance and solution file handling.

One canonical text format covers every attribute combination; adapters
normalize the three classic benchmark layouts into it.  A small registry of
best-known values ships with the package for gap reporting and can be
overridden with the HFVRP_BKS_PATH environment variable.
"""

from __future__ import annotations

import csv
import math
import os

from .model import (
    BACKHAUL,
    DEPOT,
    LINEHAUL,
    AttributeSet,
    Instance,
    Node,
    Route,
    Solution,
    VehicleType,
)

ROLES = (DEPOT, LINEHAUL, BACKHAUL)


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------- canonical

def dumps_instance(inst: Instance) -> str:
    """Canonical text form; parses back to an identical instance."""
    out = [f"NAME {inst.name}"]
    flags = inst.attributes.flags()
    out.append("ATTRIBUTES " + (" ".join(flags) if flags else "none"))
    out.append(f"DEPOTS {len(inst.depots)}")
    out.append(f"CUSTOMERS {len(inst.customers)}")
    if inst.duration_limit is None:
        out.append("DURATION_LIMIT none")
    else:
        out.append(f"DURATION_LIMIT {_fmt(inst.duration_limit)} {inst.limit_on}")
    out.append(f"VEHICLES {len(inst.fleet)}")
    for vt in inst.fleet:
        m = -1 if vt.count is None else vt.count
        out.append(f"{vt.id} {_fmt(vt.capacity)} {_fmt(vt.fixed_cost)} "
                   f"{_fmt(vt.var_cost)} {m}")
    out.append(f"NODES {len(inst.nodes)}")
    for nd in inst.nodes:
        out.append(f"{nd.id} {_fmt(nd.x)} {_fmt(nd.y)} {_fmt(nd.demand)} "
                   f"{_fmt(nd.tw_early)} {_fmt(nd.tw_late)} {_fmt(nd.service)} "
                   f"{nd.role}")
    if _needs_matrix(inst):
        out.append("MATRIX")
        for row in inst.raw_dist:
            out.append(" ".join(_fmt(v) for v in row))
    if inst.attributes.site_dependency:
        out.append("COMPAT")
        for c in inst.customers:
            allowed = [vt.id for vt in inst.fleet if not vt.is_extra and vt.allows(c)]
            out.append(" ".join(str(v) for v in [c] + allowed))
    out.append("EOF")
    return "\n".join(out) + "\n"


def _needs_matrix(inst: Instance) -> bool:
    if inst.attributes.asymmetric:
        return True
    # re-check whether coordinates reproduce the stored matrix
    for i in range(len(inst.nodes)):
        a = inst.nodes[i]
        for j in range(len(inst.nodes)):
            if i == j:
                continue
            d = math.hypot(a.x - inst.nodes[j].x, a.y - inst.nodes[j].y)
            if abs(d - inst.raw_dist[i][j]) > 1e-9:
                return True
    return False


def write_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(inst))


class ParseError(ValueError):
    pass


def _content_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def parse_instance(text: str) -> Instance:
    lines = list(_content_lines(text))
    pos = 0

    def take(prefix=None):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of file, wanted {prefix or 'more data'}")
        line = lines[pos]
        pos += 1
        if prefix is not None:
            head = line.split(None, 1)[0]
            if head != prefix:
                raise ParseError(f"expected {prefix}, got {line!r}")
        return line

    try:
        name = take("NAME").split(None, 1)[1].strip()
    except IndexError:
        raise ParseError("NAME line has no value") from None
    attr_tokens = take("ATTRIBUTES").split()[1:]
    if attr_tokens == ["none"]:
        attr_tokens = []
    try:
        attrs = AttributeSet.from_flags(attr_tokens)
    except ValueError as exc:
        raise ParseError(str(exc)) from None

    def int_field(label):
        parts = take(label).split()
        if len(parts) != 2:
            raise ParseError(f"{label} wants one integer")
        return int(parts[1])

    n_dep = int_field("DEPOTS")
    n_cus = int_field("CUSTOMERS")
    dl_parts = take("DURATION_LIMIT").split()
    if dl_parts[1] == "none":
        duration_limit, limit_on = None, "distance"
    else:
        duration_limit = float(dl_parts[1])
        limit_on = dl_parts[2] if len(dl_parts) > 2 else "distance"
        if limit_on not in ("distance", "duration"):
            raise ParseError(f"bad limit kind {limit_on!r}")

    n_types = int_field("VEHICLES")
    fleet = []
    for _ in range(n_types):
        parts = take().split()
        if len(parts) != 5:
            raise ParseError(f"vehicle row wants 5 fields: {' '.join(parts)!r}")
        tid, cap, f, r, m = (int(parts[0]), float(parts[1]), float(parts[2]),
                             float(parts[3]), int(parts[4]))
        fleet.append(VehicleType(tid, cap, f, r, None if m < 0 else m))

    n_nodes = int_field("NODES")
    if n_nodes != n_dep + n_cus:
        raise ParseError(f"NODES {n_nodes} != DEPOTS {n_dep} + CUSTOMERS {n_cus}")
    nodes = []
    for _ in range(n_nodes):
        parts = take().split()
        if len(parts) != 8 or parts[7] not in ROLES:
            raise ParseError(f"bad node row {' '.join(parts)!r}")
        nodes.append(Node(int(parts[0]), float(parts[1]), float(parts[2]),
                          float(parts[3]), float(parts[4]), float(parts[5]),
                          float(parts[6]), parts[7]))
    nodes.sort(key=lambda nd: nd.id)
    depots = [nd.id for nd in nodes if nd.role == DEPOT]
    customers = [nd.id for nd in nodes if nd.role != DEPOT]
    if len(depots) != n_dep or len(customers) != n_cus:
        raise ParseError("node roles disagree with DEPOTS/CUSTOMERS counts")

    dist = None
    compat_rows = {}
    while pos < len(lines) and lines[pos] != "EOF":
        section = take()
        if section == "MATRIX":
            dist = []
            for _ in range(n_nodes):
                row = [float(v) for v in take().split()]
                if len(row) != n_nodes:
                    raise ParseError("matrix row length mismatch")
                dist.append(row)
        elif section == "COMPAT":
            for _ in range(n_cus):
                parts = [int(v) for v in take().split()]
                compat_rows[parts[0]] = set(parts[1:])
        else:
            raise ParseError(f"unknown section {section!r}")
    if pos >= len(lines):
        raise ParseError("missing EOF marker")

    if dist is None:
        if attrs.asymmetric:
            raise ParseError("asymmetric instances need an explicit MATRIX")
        pts = {nd.id: (nd.x, nd.y) for nd in nodes}
        dist = [[0.0 if i == j else math.hypot(pts[i][0] - pts[j][0],
                                               pts[i][1] - pts[j][1])
                 for j in range(n_nodes)] for i in range(n_nodes)]

    if compat_rows:
        if not attrs.site_dependency:
            raise ParseError("COMPAT section without site_dependency flag")
        new_fleet = []
        for vt in fleet:
            mine = frozenset(c for c, ks in compat_rows.items() if vt.id in ks)
            if len(mine) == len(customers):
                mine = None
            new_fleet.append(VehicleType(vt.id, vt.capacity, vt.fixed_cost,
                                         vt.var_cost, vt.count, mine))
        fleet = new_fleet

    try:
        return Instance(name, nodes, depots, customers, dist, fleet, attrs,
                        duration_limit, limit_on)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def read_instance(path) -> Instance:
    with open(path) as fh:
        return parse_instance(fh.read())


# ------------------------------------------------------------ classic forms

CLASSIC_FORMATS = ("golden_taillard", "solomon_fsmtw", "cordeau_md")


def parse_classic(text: str, fmt: str, name: str = "instance") -> Instance:
    """Normalize one of the classic benchmark layouts into an Instance.

    golden_taillard: customer count, type count, one `Q f r m` row per type
    (m < 0 for unlimited), depot coordinates, then `x y q` per customer.

    solomon_fsmtw: the classic time-window layout (VEHICLE NUMBER/CAPACITY
    header plus CUSTOMER table), optionally followed by a FLEET block whose
    rows `label Q f r [m]` define a heterogeneous fleet.

    cordeau_md: multi-depot layout, `kind m n t` header, t `D Q` depot spec
    rows, n customer rows, t depot rows, optionally a trailing FLEET block
    shared by every depot.
    """
    if fmt == "golden_taillard":
        return _parse_golden(text, name)
    if fmt == "solomon_fsmtw":
        return _parse_solomon(text, name)
    if fmt == "cordeau_md":
        return _parse_cordeau(text, name)
    raise ParseError(f"unknown classic format {fmt!r}")


def _tokens(text):
    for line in _content_lines(text):
        for tok in line.split():
            yield tok


def _parse_golden(text, name):
    toks = list(_tokens(text))
    i = 0

    def nxt():
        nonlocal i
        if i >= len(toks):
            raise ParseError("golden_taillard: file truncated")
        tok = toks[i]
        i += 1
        return tok

    n = int(nxt())
    t = int(nxt())
    fleet = []
    for k in range(t):
        cap = float(nxt())
        f = float(nxt())
        r = float(nxt())
        m = int(nxt())
        fleet.append(VehicleType(k, cap, f, r, None if m < 0 else m))
    nodes = [Node(0, float(nxt()), float(nxt()), 0.0, 0.0, 1e7, 0.0, DEPOT)]
    for c in range(1, n + 1):
        x, y, q = float(nxt()), float(nxt()), float(nxt())
        nodes.append(Node(c, x, y, q, 0.0, 1e7, 0.0, LINEHAUL))
    if i != len(toks):
        raise ParseError("golden_taillard: trailing data")
    pts = [(nd.x, nd.y) for nd in nodes]
    dist = [[math.hypot(a[0] - b[0], a[1] - b[1]) for b in pts] for a in pts]
    return Instance(name, nodes, [0], list(range(1, n + 1)), dist, fleet,
                    AttributeSet())


def _parse_solomon(text, name):
    lines = list(_content_lines(text))
    # instance name is the first line when it is a bare word
    if lines and len(lines[0].split()) == 1 and not lines[0][0].isdigit():
        name = lines[0]
    fleet_at = next((k for k, l in enumerate(lines)
                     if l.split()[0].upper() == "FLEET"), None)
    fleet_lines = lines[fleet_at + 1:] if fleet_at is not None else []
    body = lines[:fleet_at] if fleet_at is not None else lines

    k_count = capacity = None
    rows = []
    for line in body:
        parts = line.split()
        if not all(_is_number(p) for p in parts):
            continue
        if len(parts) == 2 and k_count is None:
            k_count, capacity = int(parts[0]), float(parts[1])
        elif len(parts) >= 7:
            rows.append([float(v) for v in parts[:7]])
    if not rows:
        raise ParseError("solomon_fsmtw: no customer table")

    nodes = []
    for idx, (cid, x, y, q, a, b, s) in enumerate(rows):
        role = DEPOT if idx == 0 else LINEHAUL
        nodes.append(Node(int(cid), x, y, q if role != DEPOT else 0.0,
                          a, b, s if role != DEPOT else 0.0, role))
    if nodes[0].id != 0:
        raise ParseError("solomon_fsmtw: first customer row must be depot 0")

    if fleet_lines:
        fleet = []
        for k, line in enumerate(fleet_lines):
            parts = line.split()
            if parts and parts[0].upper() == "EOF":
                break
            vals = parts[1:] if not _is_number(parts[0]) else parts
            if len(vals) < 3:
                raise ParseError(f"solomon_fsmtw: bad FLEET row {line!r}")
            cap, f, r = float(vals[0]), float(vals[1]), float(vals[2])
            m = int(vals[3]) if len(vals) > 3 else -1
            fleet.append(VehicleType(k, cap, f, r, None if m < 0 else m))
    else:
        if capacity is None:
            raise ParseError("solomon_fsmtw: neither VEHICLE block nor FLEET")
        fleet = [VehicleType(0, capacity, 0.0, 1.0, k_count)]

    pts = [(nd.x, nd.y) for nd in nodes]
    dist = [[math.hypot(a[0] - b[0], a[1] - b[1]) for b in pts] for a in pts]
    return Instance(name, nodes, [0], [nd.id for nd in nodes[1:]], dist, fleet,
                    AttributeSet(time_windows=True))


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_cordeau(text, name):
    lines = list(_content_lines(text))
    fleet_at = next((k for k, l in enumerate(lines)
                     if l.split()[0].upper() == "FLEET"), None)
    fleet_lines = lines[fleet_at + 1:] if fleet_at is not None else []
    body = lines[:fleet_at] if fleet_at is not None else lines

    head = body[0].split()
    if len(head) < 4:
        raise ParseError("cordeau_md: header wants `kind m n t`")
    m_per, n, t = int(head[1]), int(head[2]), int(head[3])
    specs = [body[1 + k].split() for k in range(t)]
    rows = [l.split() for l in body[1 + t:]]
    if len(rows) < n + t:
        raise ParseError("cordeau_md: body shorter than n + t rows")

    # depots first so ids 0..t-1 are depots, customers follow as t..t+n-1
    nodes = []
    id_map = {}
    for k in range(t):
        r = rows[n + k]
        nodes.append(Node(k, float(r[1]), float(r[2]), 0.0, 0.0, 1e7, 0.0, DEPOT))
    for k in range(n):
        r = rows[k]
        a, b = 0.0, 1e7
        if len(r) >= 9 + int(float(r[6])):
            tail = r[7 + int(float(r[6])):]
            if len(tail) >= 2:
                a, b = float(tail[-2]), float(tail[-1])
        cid = t + k
        id_map[int(float(r[0]))] = cid
        nodes.append(Node(cid, float(r[1]), float(r[2]), float(r[4]),
                          a, b, float(r[3]), LINEHAUL))

    d_limit = float(specs[0][0])
    capacity = float(specs[0][1])
    if fleet_lines:
        fleet = []
        for k, line in enumerate(fleet_lines):
            parts = line.split()
            if parts and parts[0].upper() == "EOF":
                break
            vals = parts[1:] if not _is_number(parts[0]) else parts
            cap, f, r = float(vals[0]), float(vals[1]), float(vals[2])
            m = int(vals[3]) if len(vals) > 3 else -1
            fleet.append(VehicleType(k, cap, f, r, None if m < 0 else m))
    else:
        fleet = [VehicleType(0, capacity, 0.0, 1.0, m_per * t)]

    pts = [(nd.x, nd.y) for nd in nodes]
    dist = [[math.hypot(a[0] - b[0], a[1] - b[1]) for b in pts] for a in pts]
    tw_on = any(nd.tw_late < 1e7 for nd in nodes[t:])
    return Instance(name, nodes, list(range(t)), list(range(t, t + n)), dist,
                    fleet, AttributeSet(multi_depot=t > 1, time_windows=tw_on),
                    duration_limit=d_limit if d_limit > 0 else None,
                    limit_on="duration" if tw_on else "distance")


def read_classic(path, fmt) -> Instance:
    with open(path) as fh:
        text = fh.read()
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_classic(text, fmt, name)


# ------------------------------------------------------------------ variants

def _transform(fixed="keep", var="keep", counts="keep", flags=(), open_r=False):
    return {"fixed": fixed, "var": var, "counts": counts,
            "flags": tuple(flags) + (("open_routes",) if open_r else ())}


VARIANTS = {
    "hffvrp-v": _transform(fixed="zero"),
    "hffvrp-fv": _transform(),
    "fsmvrp-f": _transform(var="unit", counts="unlimited"),
    "fsmvrp-v": _transform(fixed="zero", counts="unlimited"),
    "fsmvrp-fv": _transform(counts="unlimited"),
    "hffovrp-v": _transform(fixed="zero", open_r=True),
    "hffovrp-fv": _transform(open_r=True),
    "hffvrpsd": _transform(flags=("split_delivery",)),
    "mdfsmvrp": _transform(counts="unlimited", flags=("multi_depot",)),
    "hffvrpb": _transform(flags=("backhaul_strict",)),
    "fsmvrpb": _transform(counts="unlimited", flags=("backhaul_strict",)),
    "sdepvrp": _transform(flags=("site_dependency",)),
    "sdepvrptw": _transform(flags=("site_dependency", "time_windows")),
}
for _suffix in ("a", "b", "c"):
    VARIANTS[f"fsmtw-dur-{_suffix}"] = _transform(counts="unlimited",
                                                  flags=("time_windows",))
    VARIANTS[f"fsmtw-dist-{_suffix}"] = _transform(counts="unlimited",
                                                   flags=("time_windows",))
for _suffix in ("c", "r", "rc"):
    VARIANTS[f"hffvrpmbtw-{_suffix}"] = _transform(
        flags=("backhaul_mixed", "time_windows"))


def apply_variant(inst: Instance, tag: str) -> Instance:
    """Rebuild the instance with the fleet/attribute conventions of the
    named benchmark variant.  Uses the raw distance matrix so load-time arc
    conventions are applied freshly for the new attribute set."""
    if tag not in VARIANTS:
        raise ParseError(f"unknown variant {tag!r} "
                         f"(choose from {', '.join(sorted(VARIANTS))})")
    spec = VARIANTS[tag]
    fleet = []
    for vt in inst.fleet:
        if vt.is_extra:
            continue
        fleet.append(VehicleType(
            id=vt.id,
            capacity=vt.capacity,
            fixed_cost=0.0 if spec["fixed"] == "zero" else vt.fixed_cost,
            var_cost=1.0 if spec["var"] == "unit" else vt.var_cost,
            count=None if spec["counts"] == "unlimited" else vt.count,
            compatible=vt.compatible,
        ))
    flags = set(inst.attributes.flags()) | set(spec["flags"])
    if "backhaul_strict" in spec["flags"]:
        flags.discard("backhaul_mixed")
    if "backhaul_mixed" in spec["flags"]:
        flags.discard("backhaul_strict")
    if len(inst.depots) > 1:
        flags.add("multi_depot")
    elif "multi_depot" in flags and len(inst.depots) == 1:
        flags.discard("multi_depot")
    attrs = AttributeSet.from_flags(sorted(flags))
    return Instance(inst.name, inst.nodes, inst.depots, inst.customers,
                    inst.raw_dist, fleet, attrs, inst.duration_limit,
                    inst.limit_on)


# ------------------------------------------------------------ packaged data

def data_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "instances")


def packaged_instances(group: str | None = None) -> dict:
    """Instance files shipped with the package, name -> absolute path.
    `group` narrows to a subdirectory such as 'taillard' or 'fsmtw'."""
    root = data_dir() if group is None else os.path.join(data_dir(), group)
    found = {}
    for dirpath, _, files in os.walk(root):
        rel = os.path.relpath(dirpath, root)
        for f in sorted(files):
            name = os.path.splitext(f)[0]
            key = name if rel == "." else f"{rel}/{name}"
            found[key] = os.path.join(dirpath, f)
    return found


# ------------------------------------------------------------- BKS registry

_BKS_CACHE = {}


def bks_path() -> str:
    override = os.environ.get("HFVRP_BKS_PATH")
    if override:
        return override
    return os.path.join(os.path.dirname(__file__), "data", "bks.csv")


def load_bks(path=None) -> dict:
    path = path or bks_path()
    key = os.path.abspath(path)
    if key in _BKS_CACHE:
        return _BKS_CACHE[key]
    table = {}
    if os.path.exists(path):
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                table[(row["instance"].strip().lower(),
                       row["variant"].strip().lower())] = float(row["value"])
    _BKS_CACHE[key] = table
    return table


def bks_lookup(instance_name: str, variant: str, path=None):
    """Best-known value for (instance, variant), or None when unlisted."""
    return load_bks(path).get((str(instance_name).strip().lower(),
                               variant.strip().lower()))


# ------------------------------------------------------------ solution files

def dumps_solution(inst: Instance, sol: Solution) -> str:
    out = [f"OBJ {repr(float(sol.objective))}"]
    for r in sol.routes:
        if not r.visits:
            continue
        stops = []
        for c, q in r.visits:
            if abs(q - inst.nodes[c].demand) > 1e-9:
                stops.append(f"{c}:{_fmt(q)}")
            else:
                stops.append(str(c))
        out.append(f"ROUTE {r.depot} {r.vehicle} : " + " ".join(stops))
    return "\n".join(out) + "\n"


def write_solution(inst: Instance, sol: Solution, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_solution(inst, sol))


def read_solution(inst: Instance, path) -> Solution:
    """Read a solution file and re-derive stats, costs and the objective
    (omega-free; warp is reported separately)."""
    from .evaluation import route_cost, route_stat

    routes = []
    obj = None
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "OBJ":
                obj = float(parts[1])
            elif parts[0] == "ROUTE":
                if parts[3] != ":":
                    raise ParseError(f"bad route line {line!r}")
                depot, tid = int(parts[1]), int(parts[2])
                visits = []
                for tok in parts[4:]:
                    if ":" in tok:
                        c, q = tok.split(":")
                        visits.append((int(c), float(q)))
                    else:
                        c = int(tok)
                        visits.append((c, inst.nodes[c].demand))
                routes.append(Route(depot, tid, visits))
            else:
                raise ParseError(f"bad solution line {line!r}")
    total = 0.0
    warp = 0.0
    for r in routes:
        r.stat = route_stat(inst, r.depot, r.visits)
        r.cost = route_cost(r.stat, inst.vt(r.vehicle), 0.0)
        total += r.cost
        warp += r.stat.tw
    used = {}
    for r in routes:
        used[r.vehicle] = used.get(r.vehicle, 0) + 1
    return Solution(routes=routes, fleet_used=used,
                    objective=obj if obj is not None else total,
                    tw_violation=warp, feasible=warp <= 1e-9)
