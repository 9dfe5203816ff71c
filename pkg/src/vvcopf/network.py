"""Three-phase distribution feeder data model and JSON parsing.

A feeder file is a JSON document with SI quantities plus declared bases;
everything is normalized to per-unit at parse time.  Line impedance blocks
are given as R/X matrices in ohms (per unit length) and inverted into
per-phase-pair admittance blocks.  A parsed ``Feeder`` is immutable and can
be shared freely across concurrent solves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import networkx as nx
import numpy as np


class FeederError(ValueError):
    """Malformed or inconsistent feeder description."""


class Phase(str, Enum):
    A = "a"
    B = "b"
    C = "c"

    def __repr__(self):  # pragma: no cover - cosmetic
        return f"Phase.{self.name}"


#: Nominal angle of each phase (radians) relative to the phase-a reference.
PHASE_SHIFT = {Phase.A: 0.0, Phase.B: -2.0 * math.pi / 3.0, Phase.C: 2.0 * math.pi / 3.0}

PHASE_ORDER = (Phase.A, Phase.B, Phase.C)


def _parse_phases(spec) -> tuple[Phase, ...]:
    if isinstance(spec, str):
        letters = list(spec)
    else:
        letters = list(spec)
    try:
        phases = tuple(Phase(str(p).lower()) for p in letters)
    except ValueError as exc:
        raise FeederError(f"unknown phase in {spec!r}") from exc
    if len(set(phases)) != len(phases):
        raise FeederError(f"duplicate phase in {spec!r}")
    return tuple(sorted(phases, key=PHASE_ORDER.index))


@dataclass(frozen=True, order=True)
class NodeRef:
    """A (bus, phase) pair; the atomic network node."""

    bus: str
    phase: Phase

    def __str__(self):
        return f"{self.bus}.{self.phase.value}"


@dataclass(frozen=True)
class LineBlock:
    """Series branch between two buses with a per-phase-pair admittance block.

    ``g``/``b`` map ordered phase pairs to per-unit conductance/susceptance;
    entries exist only for phases present on the line and are symmetric in
    the pair index.  The original ohmic R/X matrices are kept for lossless
    serialization.
    """

    from_bus: str
    to_bus: str
    phases: tuple[Phase, ...]
    g: dict
    b: dict
    r_ohm: tuple
    x_ohm: tuple
    length: float

    def has_phase(self, phase: Phase) -> bool:
        return phase in self.phases

    def admittance(self, pair: tuple[Phase, Phase]) -> tuple[float, float]:
        """Stored block entry (g, b) for an ordered phase pair."""
        pa, pb = pair
        if pa not in self.phases or pb not in self.phases:
            raise FeederError(
                f"phase pair ({pa.value},{pb.value}) not present on line "
                f"{self.from_bus}-{self.to_bus}"
            )
        return self.g[(pa, pb)], self.b[(pa, pb)]

    def complex_block(self) -> np.ndarray:
        """Admittance block as a complex matrix ordered like ``self.phases``."""
        n = len(self.phases)
        y = np.zeros((n, n), dtype=complex)
        for a, pa in enumerate(self.phases):
            for c, pb in enumerate(self.phases):
                y[a, c] = self.g[(pa, pb)] + 1j * self.b[(pa, pb)]
        return y


@dataclass(frozen=True)
class Load:
    node: NodeRef
    p: float  # per-unit active demand
    q: float  # per-unit reactive demand
    p_kw: float
    q_kvar: float


@dataclass(frozen=True)
class PVUnit:
    node: NodeRef
    p_max: float  # per-unit maximum active power point
    s_max: float  # per-unit apparent power rating
    has_vvc: bool
    p_max_kw: float
    s_max_kva: float


@dataclass(frozen=True)
class Substation:
    bus: str
    nodes: tuple[NodeRef, ...]
    v_mag: dict  # NodeRef -> per-unit magnitude
    v_ang: dict  # NodeRef -> radians
    v_pu: float
    deg_a: float


@dataclass(frozen=True)
class Feeder:
    buses: dict  # bus id -> tuple of phases, in file order
    lines: tuple[LineBlock, ...]
    loads: tuple[Load, ...]
    pv_units: tuple[PVUnit, ...]
    substation: Substation
    v_limits: dict  # NodeRef -> (v_lo, v_hi) per-unit magnitudes
    price_grid: float  # currency per MWh from the bulk system
    price_pv: float  # currency per MWh paid for PV surplus
    power_base_mva: float
    voltage_base_kv: float
    bus_limit_overrides: dict = field(default_factory=dict)

    @property
    def nodes(self) -> tuple[NodeRef, ...]:
        out = []
        for bus, phases in self.buses.items():
            out.extend(NodeRef(bus, ph) for ph in phases)
        return tuple(out)

    def node_exists(self, node: NodeRef) -> bool:
        return node.bus in self.buses and node.phase in self.buses[node.bus]

    def is_substation_node(self, node: NodeRef) -> bool:
        return node.bus == self.substation.bus

    def load_at(self, node: NodeRef) -> Optional[Load]:
        for load in self.loads:
            if load.node == node:
                return load
        return None

    def lines_at(self, node: NodeRef):
        """Incident (line, other_bus) pairs carrying this node's phase."""
        out = []
        for line in self.lines:
            if node.phase not in line.phases:
                continue
            if line.from_bus == node.bus:
                out.append((line, line.to_bus))
            elif line.to_bus == node.bus:
                out.append((line, line.from_bus))
        return out


@dataclass
class VoltageState:
    """Per-node voltage magnitudes (p.u.) and angles (radians)."""

    mag: dict
    ang: dict

    def phasor(self, node: NodeRef) -> complex:
        return self.mag[node] * complex(math.cos(self.ang[node]), math.sin(self.ang[node]))

    def copy(self) -> "VoltageState":
        return VoltageState(dict(self.mag), dict(self.ang))


DEFAULT_V_MIN = 0.95
DEFAULT_V_MAX = 1.05


def _require(cond, message):
    if not cond:
        raise FeederError(message)


def _as_matrix(raw, n, what, line_desc):
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (n, n):
        raise FeederError(f"{what} of line {line_desc} must be {n}x{n}, got {arr.shape}")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12):
        raise FeederError(f"asymmetric {what} block on line {line_desc}")
    return arr


def parse_feeder(text: str) -> Feeder:
    """Parse and validate a feeder JSON document; normalize to per-unit."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc

    for key in ("bases", "buses", "lines", "substation"):
        _require(key in doc, f"missing top-level key {key!r}")
    bases = doc["bases"]
    _require("mva" in bases and "kv" in bases, "bases must declare mva and kv")
    mva = float(bases["mva"])
    kv = float(bases["kv"])
    _require(mva > 0 and kv > 0, "bases must be positive")
    z_base = kv * kv / mva

    prices = doc.get("prices", {})
    price_grid = float(prices.get("grid_per_mwh", 0.0))
    price_pv = float(prices.get("pv_per_mwh", 0.0))

    buses: dict = {}
    overrides: dict = {}
    for entry in doc["buses"]:
        bus_id = str(entry["id"])
        _require(bus_id not in buses, f"duplicate bus id {bus_id!r}")
        buses[bus_id] = _parse_phases(entry.get("phases", "abc"))
        if "v_min_pu" in entry or "v_max_pu" in entry:
            overrides[bus_id] = (
                float(entry.get("v_min_pu", DEFAULT_V_MIN)),
                float(entry.get("v_max_pu", DEFAULT_V_MAX)),
            )

    def check_bus(bus_id, context):
        _require(bus_id in buses, f"{context} references undeclared bus {bus_id!r}")

    lines = []
    for entry in doc["lines"]:
        fb, tb = str(entry["from"]), str(entry["to"])
        check_bus(fb, "line")
        check_bus(tb, "line")
        phases = _parse_phases(entry.get("phases", "abc"))
        desc = f"{fb}-{tb}"
        for ph in phases:
            _require(ph in buses[fb], f"line {desc} uses phase {ph.value} absent at bus {fb!r}")
            _require(ph in buses[tb], f"line {desc} uses phase {ph.value} absent at bus {tb!r}")
        n = len(phases)
        length = float(entry.get("length", 1.0))
        _require(length > 0, f"nonpositive length on line {desc}")
        r = _as_matrix(entry["r_ohm"], n, "r_ohm", desc)
        x = _as_matrix(entry["x_ohm"], n, "x_ohm", desc)
        z_pu = (r + 1j * x) * length / z_base
        try:
            y = np.linalg.inv(z_pu)
        except np.linalg.LinAlgError as exc:
            raise FeederError(f"singular impedance block on line {desc}") from exc
        # Z symmetric => Y symmetric; symmetrize away inversion round-off.
        y = (y + y.T) / 2.0
        g = {}
        b = {}
        for a, pa in enumerate(phases):
            for c, pb in enumerate(phases):
                g[(pa, pb)] = float(y[a, c].real)
                b[(pa, pb)] = float(y[a, c].imag)
        lines.append(
            LineBlock(
                from_bus=fb,
                to_bus=tb,
                phases=phases,
                g=g,
                b=b,
                r_ohm=tuple(tuple(row) for row in r.tolist()),
                x_ohm=tuple(tuple(row) for row in x.tolist()),
                length=length,
            )
        )

    loads = []
    for entry in doc.get("loads", ()):
        bus_id = str(entry["bus"])
        check_bus(bus_id, "load")
        phase = Phase(str(entry["phase"]).lower())
        _require(phase in buses[bus_id], f"load at {bus_id!r} on absent phase {phase.value}")
        node = NodeRef(bus_id, phase)
        p_kw = float(entry["p_kw"])
        q_kvar = float(entry.get("q_kvar", 0.0))
        _require(p_kw >= 0, f"negative active demand at {node}")
        _require(all(load.node != node for load in loads), f"duplicate load at {node}")
        loads.append(Load(node, p_kw / (1000.0 * mva), q_kvar / (1000.0 * mva), p_kw, q_kvar))

    pv_units = []
    for entry in doc.get("pv", ()):
        bus_id = str(entry["bus"])
        check_bus(bus_id, "pv unit")
        phase = Phase(str(entry["phase"]).lower())
        _require(phase in buses[bus_id], f"pv at {bus_id!r} on absent phase {phase.value}")
        node = NodeRef(bus_id, phase)
        p_max_kw = float(entry["p_max_kw"])
        s_max_kva = float(entry.get("s_max_kva", p_max_kw))
        _require(0.0 <= p_max_kw <= s_max_kva, f"pv at {node} needs 0 <= p_max <= s_max")
        pv_units.append(
            PVUnit(
                node,
                p_max_kw / (1000.0 * mva),
                s_max_kva / (1000.0 * mva),
                bool(entry.get("vvc", False)),
                p_max_kw,
                s_max_kva,
            )
        )

    sub = doc["substation"]
    _require(not isinstance(sub, list), "exactly one substation per feeder")
    sub_bus = str(sub["bus"])
    check_bus(sub_bus, "substation")
    v_pu = float(sub.get("v_pu", 1.0))
    deg_a = float(sub.get("deg_a", 0.0))
    sub_nodes = tuple(NodeRef(sub_bus, ph) for ph in buses[sub_bus])
    v_mag = {n: v_pu for n in sub_nodes}
    v_ang = {n: math.radians(deg_a) + PHASE_SHIFT[n.phase] for n in sub_nodes}
    substation = Substation(sub_bus, sub_nodes, v_mag, v_ang, v_pu, deg_a)

    graph = nx.Graph()
    graph.add_nodes_from(buses)
    for line in lines:
        _require(
            not graph.has_edge(line.from_bus, line.to_bus),
            f"parallel line {line.from_bus}-{line.to_bus} makes the feeder non-radial",
        )
        _require(line.from_bus != line.to_bus, f"self-loop line at {line.from_bus}")
        graph.add_edge(line.from_bus, line.to_bus)
    _require(nx.is_connected(graph) if buses else False, "feeder graph is not connected")
    _require(len(lines) == len(buses) - 1, "feeder graph is not radial")

    v_limits = {}
    for bus_id, phases in buses.items():
        lo, hi = overrides.get(bus_id, (DEFAULT_V_MIN, DEFAULT_V_MAX))
        _require(lo < hi, f"voltage limits at {bus_id!r} need lo < hi")
        for ph in phases:
            v_limits[NodeRef(bus_id, ph)] = (lo, hi)

    return Feeder(
        buses=buses,
        lines=tuple(lines),
        loads=tuple(loads),
        pv_units=tuple(pv_units),
        substation=substation,
        v_limits=v_limits,
        price_grid=price_grid,
        price_pv=price_pv,
        power_base_mva=mva,
        voltage_base_kv=kv,
        bus_limit_overrides=overrides,
    )


def load_feeder(path) -> Feeder:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_feeder(fh.read())


def serialize_feeder(feeder: Feeder) -> str:
    """Emit the canonical JSON form; parse(serialize(f)) == f."""
    doc = {
        "bases": {"mva": feeder.power_base_mva, "kv": feeder.voltage_base_kv},
        "prices": {"grid_per_mwh": feeder.price_grid, "pv_per_mwh": feeder.price_pv},
        "buses": [],
        "lines": [],
        "loads": [],
        "pv": [],
        "substation": {
            "bus": feeder.substation.bus,
            "v_pu": feeder.substation.v_pu,
            "deg_a": feeder.substation.deg_a,
        },
    }
    for bus_id, phases in feeder.buses.items():
        entry = {"id": bus_id, "phases": "".join(ph.value for ph in phases)}
        if bus_id in feeder.bus_limit_overrides:
            lo, hi = feeder.bus_limit_overrides[bus_id]
            entry["v_min_pu"] = lo
            entry["v_max_pu"] = hi
        doc["buses"].append(entry)
    for line in feeder.lines:
        doc["lines"].append(
            {
                "from": line.from_bus,
                "to": line.to_bus,
                "phases": "".join(ph.value for ph in line.phases),
                "r_ohm": [list(row) for row in line.r_ohm],
                "x_ohm": [list(row) for row in line.x_ohm],
                "length": line.length,
            }
        )
    for load in feeder.loads:
        doc["loads"].append(
            {
                "bus": load.node.bus,
                "phase": load.node.phase.value,
                "p_kw": load.p_kw,
                "q_kvar": load.q_kvar,
            }
        )
    for pv in feeder.pv_units:
        doc["pv"].append(
            {
                "bus": pv.node.bus,
                "phase": pv.node.phase.value,
                "p_max_kw": pv.p_max_kw,
                "s_max_kva": pv.s_max_kva,
                "vvc": pv.has_vvc,
            }
        )
    return json.dumps(doc, indent=2, sort_keys=True)


def line_admittance(line: LineBlock, pair: tuple[Phase, Phase]) -> tuple[float, float]:
    """(g, b) of a line's stored block for an ordered phase pair."""
    return line.admittance(pair)


def flat_start(feeder: Feeder) -> VoltageState:
    """Substation magnitudes everywhere, nominal 0/-120/+120 degree angles."""
    sub = feeder.substation
    mag = {}
    ang = {}
    base_ang = math.radians(sub.deg_a)
    for node in feeder.nodes:
        mag[node] = sub.v_pu
        ang[node] = base_ang + PHASE_SHIFT[node.phase]
    for n in sub.nodes:
        mag[n] = sub.v_mag[n]
        ang[n] = sub.v_ang[n]
    return VoltageState(mag, ang)
