"""Radial distribution network model, document loader and per-unit conversion."""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import networkx as nx
import numpy as np

from .ev_data import format_timestamp, parse_timestamp

NETWORK_SCHEMA = "flexgrid.network.v1"
GEN_KINDS = ("wind_curtailable", "firm")


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    base_kv: float
    v_min_pu: float = 0.9
    v_max_pu: float = 1.1
    is_slack: bool = False
    v_set_pu: float = 1.0


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    r_ohm: float
    x_ohm: float
    s_max_mva: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    kind: str
    profile: str
    q_min_mvar: float = 0.0
    q_max_mvar: float = 0.0
    curtail_cost: float = 0.0


@dataclass(frozen=True)
class Demand:
    bus: str
    profile: str
    q_over_p: float = 0.0


@dataclass
class Network:
    """A validated radial network with its time series.

    ``series`` maps profile ids to MW arrays sharing ``timestamps``.  Lines
    are stored parent-to-child after validation.
    """

    name: str
    buses: list[Bus]
    lines: list[Line]
    generators: list[Generator]
    demands: list[Demand]
    series: dict[str, np.ndarray]
    timestamps: list[datetime]
    s_base_mva: float
    slack_import_limit_mw: float = math.inf
    slack_export_limit_mw: float = math.inf
    default_step_minutes: float = 30.0  # used only when the horizon has a single step

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.is_slack)

    @property
    def horizon(self) -> int:
        return len(self.timestamps)

    @property
    def timestep_hours(self) -> float:
        if len(self.timestamps) < 2:
            return self.default_step_minutes / 60.0
        return (self.timestamps[1] - self.timestamps[0]).total_seconds() / 3600.0

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def demand_mw(self) -> np.ndarray:
        """(T, n_bus) active demand."""
        idx = self.bus_index()
        out = np.zeros((self.horizon, len(self.buses)))
        for d in self.demands:
            out[:, idx[d.bus]] += self.series[d.profile]
        return out

    def demand_mvar(self) -> np.ndarray:
        idx = self.bus_index()
        out = np.zeros((self.horizon, len(self.buses)))
        for d in self.demands:
            out[:, idx[d.bus]] += d.q_over_p * self.series[d.profile]
        return out

    def generation_mw(self) -> np.ndarray:
        """(T, n_gen) available active power."""
        return np.column_stack([self.series[g.profile] for g in self.generators]) if self.generators else np.zeros((self.horizon, 0))

    def validate(self) -> None:
        validate_network(self)


# ---------------------------------------------------------------------------
# Validation


def validate_network(net: Network) -> None:
    ids = net.bus_ids
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate bus ids")
    if net.s_base_mva <= 0:
        raise NetworkError("s_base_mva must be positive")
    slacks = [b.id for b in net.buses if b.is_slack]
    if len(slacks) != 1:
        raise NetworkError(f"exactly one slack bus required, found {len(slacks)}")
    for b in net.buses:
        if b.base_kv <= 0:
            raise NetworkError(f"bus {b.id}: base_kv must be positive")
        if not 0 < b.v_min_pu < b.v_max_pu:
            raise NetworkError(f"bus {b.id}: need 0 < v_min_pu < v_max_pu")
    known = set(ids)
    for ln in net.lines:
        if ln.from_bus == ln.to_bus:
            raise NetworkError(f"line {ln.id} connects bus {ln.from_bus} to itself")
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise NetworkError(f"line {ln.id} references unknown bus {end}")
        if ln.r_ohm < 0 or ln.r_ohm + abs(ln.x_ohm) <= 0:
            raise NetworkError(f"line {ln.id}: need r >= 0 and r + |x| > 0")
        if ln.s_max_mva <= 0:
            raise NetworkError(f"line {ln.id}: s_max_mva must be positive")
    for g in net.generators:
        if g.bus not in known:
            raise NetworkError(f"generator {g.id} references unknown bus {g.bus}")
        if g.kind not in GEN_KINDS:
            raise NetworkError(f"generator {g.id}: kind must be one of {GEN_KINDS}")
        if g.q_min_mvar > g.q_max_mvar:
            raise NetworkError(f"generator {g.id}: q_min > q_max")
    for d in net.demands:
        if d.bus not in known:
            raise NetworkError(f"demand references unknown bus {d.bus}")
    needed = {g.profile for g in net.generators} | {d.profile for d in net.demands}
    for sid in needed:
        if sid not in net.series:
            raise NetworkError(f"missing profile {sid!r}")
        if len(net.series[sid]) != net.horizon:
            raise NetworkError(f"profile {sid!r} has {len(net.series[sid])} steps, horizon is {net.horizon}")
    _check_radial(net)


def _check_radial(net: Network) -> None:
    g = nx.MultiGraph()
    g.add_nodes_from(net.bus_ids)
    for ln in net.lines:
        g.add_edge(ln.from_bus, ln.to_bus, key=ln.id)
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        names = " -> ".join(f"{u}-[{k}]-{v}" for u, v, k in cycle)
        raise NetworkError(f"network is not radial: cycle {names}")
    if not nx.is_connected(g):
        reach = nx.node_connected_component(g, net.slack.id)
        stray = sorted(set(net.bus_ids) - reach)
        raise NetworkError(f"network is not radial: buses {stray} are disconnected from slack {net.slack.id}")


def orient_lines(buses: list[Bus], lines: list[Line]) -> list[Line]:
    """Reorient every line parent->child by BFS from the slack; keep input order."""
    slack = next(b.id for b in buses if b.is_slack)
    adj: dict[str, list[tuple[str, int]]] = {b.id: [] for b in buses}
    for i, ln in enumerate(lines):
        adj[ln.from_bus].append((ln.to_bus, i))
        adj[ln.to_bus].append((ln.from_bus, i))
    parent_of: dict[int, str] = {}
    seen = {slack}
    queue = deque([slack])
    while queue:
        u = queue.popleft()
        for v, i in adj[u]:
            if v not in seen:
                seen.add(v)
                parent_of[i] = u
                queue.append(v)
    out = []
    for i, ln in enumerate(lines):
        if parent_of.get(i, ln.from_bus) != ln.from_bus:
            ln = replace(ln, from_bus=ln.to_bus, to_bus=ln.from_bus)
        out.append(ln)
    return out


# ---------------------------------------------------------------------------
# Documents


def read_profile_csv(path) -> tuple[list[datetime], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise NetworkError(f"missing profile file {path}")
    times, values = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "value_mw"]:
            raise NetworkError(f"{path}: header must be timestamp,value_mw")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(parse_timestamp(row[0]))
                values.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise NetworkError(f"{path}:{lineno}: {exc}") from exc
    if not times:
        raise NetworkError(f"{path}: empty profile")
    steps = {b - a for a, b in zip(times, times[1:])}
    if len(steps) > 1 or any(s <= timedelta(0) for s in steps):
        raise NetworkError(f"{path}: timestep is not uniform")
    return times, np.array(values)


def write_profile_csv(path, timestamps, values) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value_mw"])
        for t, v in zip(timestamps, values):
            w.writerow([format_timestamp(t), repr(float(v))])


def _opt_float(v, default):
    return default if v is None else float(v)


def load_network(path) -> Network:
    """Load and validate a network document plus its profile CSVs."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise NetworkError(f"cannot read network {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("schema") != NETWORK_SCHEMA:
        raise NetworkError(f"{path}: expected schema {NETWORK_SCHEMA}, got {doc.get('schema')!r}")
    try:
        buses = [
            Bus(str(b["id"]), float(b["base_kv"]), float(b.get("v_min_pu", 0.9)), float(b.get("v_max_pu", 1.1)),
                bool(b.get("is_slack", False)), float(b.get("v_set_pu", 1.0)))
            for b in doc["buses"]
        ]
        lines = [
            Line(str(ln["id"]), str(ln["from_bus"]), str(ln["to_bus"]), float(ln["r_ohm"]), float(ln["x_ohm"]),
                 float(ln["s_max_mva"]))
            for ln in doc["lines"]
        ]
        gens = [
            Generator(str(g["id"]), str(g["bus"]), g["kind"], str(g["profile"]), float(g.get("q_min_mvar", 0.0)),
                      float(g.get("q_max_mvar", 0.0)), float(g.get("curtail_cost", 0.0)))
            for g in doc.get("generators", [])
        ]
        demands = [Demand(str(d["bus"]), str(d["profile"]), float(d.get("q_over_p", 0.0))) for d in doc.get("demands", [])]
        slack = doc.get("slack", {})
        s_base = float(doc["s_base_mva"])
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"{path}: malformed network document: {exc}") from exc

    series: dict[str, np.ndarray] = {}
    timestamps: list[datetime] | None = None
    for sid, rel in sorted(doc.get("profiles", {}).items()):
        times, values = read_profile_csv(path.parent / rel)
        if timestamps is None:
            timestamps = times
        elif times != timestamps:
            raise NetworkError(f"profile {sid!r} does not share the horizon of the other profiles")
        series[sid] = values
    net = Network(
        name=str(doc.get("name", path.stem)),
        buses=buses,
        lines=lines,
        generators=gens,
        demands=demands,
        series=series,
        timestamps=timestamps or [],
        s_base_mva=s_base,
        slack_import_limit_mw=_opt_float(slack.get("import_limit_mw"), math.inf),
        slack_export_limit_mw=_opt_float(slack.get("export_limit_mw"), math.inf),
    )
    validate_network(net)
    net.lines = orient_lines(net.buses, net.lines)
    return net


def save_network(net: Network, path, profile_dir: str = "profiles") -> None:
    """Write a network document and one CSV per series next to it."""
    path = Path(path)
    (path.parent / profile_dir).mkdir(parents=True, exist_ok=True)
    profiles = {}
    for sid in sorted(net.series):
        rel = f"{profile_dir}/{sid}.csv"
        write_profile_csv(path.parent / rel, net.timestamps, net.series[sid])
        profiles[sid] = rel

    def lim(v):
        return None if math.isinf(v) else v

    doc = {
        "schema": NETWORK_SCHEMA,
        "name": net.name,
        "s_base_mva": net.s_base_mva,
        "slack": {"import_limit_mw": lim(net.slack_import_limit_mw), "export_limit_mw": lim(net.slack_export_limit_mw)},
        "buses": [b.__dict__ for b in net.buses],
        "lines": [ln.__dict__ for ln in net.lines],
        "generators": [g.__dict__ for g in net.generators],
        "demands": [d.__dict__ for d in net.demands],
        "profiles": profiles,
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Per-unit


@dataclass
class PerUnitNetwork:
    """Array view of a network in per-unit, indexed by bus/line/generator order."""

    network: Network
    s_base_mva: float
    z_base_ohm: np.ndarray  # per line
    parent: np.ndarray  # per line, bus index
    child: np.ndarray
    r_pu: np.ndarray
    x_pu: np.ndarray
    s_max_pu: np.ndarray
    v_min_pu: np.ndarray
    v_max_pu: np.ndarray
    slack: int
    v_slack_pu: float
    demand_p: np.ndarray  # (T, n_bus)
    demand_q: np.ndarray
    gen_p: np.ndarray  # (T, n_gen)
    gen_bus: np.ndarray
    gen_q_min: np.ndarray
    gen_q_max: np.ndarray
    gen_curtailable: np.ndarray  # bool
    curtail_cost: np.ndarray
    slack_import_pu: float
    slack_export_pu: float
    bus_ids: list[str] = field(default_factory=list)
    line_ids: list[str] = field(default_factory=list)
    gen_ids: list[str] = field(default_factory=list)

    @property
    def n_bus(self) -> int:
        return len(self.v_min_pu)

    @property
    def n_line(self) -> int:
        return len(self.r_pu)

    @property
    def n_gen(self) -> int:
        return len(self.gen_bus)

    @property
    def horizon(self) -> int:
        return self.demand_p.shape[0]

    @property
    def z_abs(self) -> np.ndarray:
        return np.hypot(self.r_pu, self.x_pu)


def _line_kv(net: Network, ln: Line) -> float:
    kv = {b.id: b.base_kv for b in net.buses}
    a, b = kv[ln.from_bus], kv[ln.to_bus]
    if not math.isclose(a, b, rel_tol=1e-12):
        raise NetworkError(f"line {ln.id} joins {a} kV and {b} kV buses; transformers are not modelled")
    return a


def to_per_unit(net: Network, s_base_mva: float | None = None) -> PerUnitNetwork:
    s_base = net.s_base_mva if s_base_mva is None else float(s_base_mva)
    if s_base <= 0:
        raise NetworkError("s_base_mva must be positive")
    if any(b.base_kv <= 0 for b in net.buses):
        raise NetworkError("zero base_kv")
    idx = net.bus_index()
    zb = np.array([_line_kv(net, ln) ** 2 / s_base for ln in net.lines])
    return PerUnitNetwork(
        network=net,
        s_base_mva=s_base,
        z_base_ohm=zb,
        parent=np.array([idx[ln.from_bus] for ln in net.lines], dtype=int),
        child=np.array([idx[ln.to_bus] for ln in net.lines], dtype=int),
        r_pu=np.array([ln.r_ohm for ln in net.lines]) / zb if net.lines else np.zeros(0),
        x_pu=np.array([ln.x_ohm for ln in net.lines]) / zb if net.lines else np.zeros(0),
        s_max_pu=np.array([ln.s_max_mva for ln in net.lines]) / s_base,
        v_min_pu=np.array([b.v_min_pu for b in net.buses]),
        v_max_pu=np.array([b.v_max_pu for b in net.buses]),
        slack=idx[net.slack.id],
        v_slack_pu=net.slack.v_set_pu,
        demand_p=net.demand_mw() / s_base,
        demand_q=net.demand_mvar() / s_base,
        gen_p=net.generation_mw() / s_base,
        gen_bus=np.array([idx[g.bus] for g in net.generators], dtype=int),
        gen_q_min=np.array([g.q_min_mvar for g in net.generators]) / s_base,
        gen_q_max=np.array([g.q_max_mvar for g in net.generators]) / s_base,
        gen_curtailable=np.array([g.kind == "wind_curtailable" for g in net.generators], dtype=bool),
        curtail_cost=np.array([g.curtail_cost for g in net.generators]),
        slack_import_pu=net.slack_import_limit_mw / s_base,
        slack_export_pu=net.slack_export_limit_mw / s_base,
        bus_ids=net.bus_ids,
        line_ids=[ln.id for ln in net.lines],
        gen_ids=[g.id for g in net.generators],
    )


def to_physical(pu: PerUnitNetwork) -> Network:
    """Rebuild a Network from per-unit arrays (inverse of ``to_per_unit``)."""
    src = pu.network
    s = pu.s_base_mva
    lines = [
        replace(ln, r_ohm=float(pu.r_pu[i] * pu.z_base_ohm[i]), x_ohm=float(pu.x_pu[i] * pu.z_base_ohm[i]),
                s_max_mva=float(pu.s_max_pu[i] * s))
        for i, ln in enumerate(src.lines)
    ]
    gens = [
        replace(g, q_min_mvar=float(pu.gen_q_min[i] * s), q_max_mvar=float(pu.gen_q_max[i] * s))
        for i, g in enumerate(src.generators)
    ]
    series = dict(src.series)
    for i, g in enumerate(src.generators):
        series[g.profile] = pu.gen_p[:, i] * s
    # demand columns are per bus; a profile shared by several buses is rebuilt from the first bus using it
    idx = src.bus_index()
    for d in src.demands:
        share = [e for e in src.demands if e.bus == d.bus]
        if len(share) == 1:
            series[d.profile] = pu.demand_p[:, idx[d.bus]] * s
    return Network(src.name, list(src.buses), lines, gens, list(src.demands), series, list(src.timestamps), s,
                   pu.slack_import_pu * s, pu.slack_export_pu * s)


def demand_distribution(net: Network) -> dict[str, float]:
    """Share of total demand energy over the horizon located at each bus."""
    energy = net.demand_mw().sum(axis=0)
    total = energy.sum()
    if not total > 0:
        raise NetworkError("total demand over the horizon is zero")
    return {b: float(e / total) for b, e in zip(net.bus_ids, energy)}
