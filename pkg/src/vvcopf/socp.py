"""Convex SOCP formulation of the three-phase unbalanced ACOPF.

Builds the auxiliary-variable flow model: squared magnitudes u, per-path
cosine/sine products c and e, linear flow definitions with mutual-coupling
terms, nodal balances, first-order Taylor bounding rows for c and e around
an iteratively updated base point, and lazily added rotated SOC cones.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .conic import ConicModel
from .network import Feeder, NodeRef, Phase, VoltageState

#: Ordered (node, node) pair appearing in a flow expression.
AuxPath = tuple

NEG_U_CLAMP = 1e-9  # tolerance for slightly negative solver u values


class SolutionError(RuntimeError):
    """Solution values violate a structural precondition."""


# ---------------------------------------------------------------------------
# variable naming


def vn_u(node: NodeRef) -> str:
    return f"u[{node}]"


def vn_th(node: NodeRef) -> str:
    return f"th[{node}]"


def vn_c(path: AuxPath) -> str:
    return f"c[{path[0]}|{path[1]}]"


def vn_e(path: AuxPath) -> str:
    return f"e[{path[0]}|{path[1]}]"


def vn_flow(kind: str, line_idx: int, direction, phase: Phase) -> str:
    return f"{kind}L[{line_idx}:{direction[0]}>{direction[1]}:{phase.value}]"


def vn_grid(kind: str, node: NodeRef) -> str:
    return f"{kind}g[{node}]"


def vn_pv(kind: str, k: int) -> str:
    return f"{kind}pv[{k}]"


# ---------------------------------------------------------------------------
# path enumeration


def canonical(path: AuxPath) -> AuxPath:
    a, b = path
    return path if (a.bus, a.phase.value) <= (b.bus, b.phase.value) else (b, a)


def enumerate_aux_paths(feeder: Feeder) -> list:
    """All ordered node pairs appearing in any flow expression.

    Cross-bus pairs (i.phi, j.phi') for every phase pair of every line, and
    same-bus cross-phase pairs (i.phi, i.phi') at both ends of multi-phase
    lines; both orientations, deduplicated in insertion order.
    """
    seen = set()
    out = []

    def add(a, b):
        p = (a, b)
        if p not in seen:
            seen.add(p)
            out.append(p)

    for line in feeder.lines:
        for bus in (line.from_bus, line.to_bus):
            for pa in line.phases:
                for pb in line.phases:
                    if pa is not pb:
                        add(NodeRef(bus, pa), NodeRef(bus, pb))
        for pa in line.phases:
            for pb in line.phases:
                add(NodeRef(line.from_bus, pa), NodeRef(line.to_bus, pb))
                add(NodeRef(line.to_bus, pb), NodeRef(line.from_bus, pa))
    return out


def canonical_paths(feeder: Feeder) -> list:
    seen = set()
    out = []
    for p in enumerate_aux_paths(feeder):
        cp = canonical(p)
        if cp not in seen:
            seen.add(cp)
            out.append(cp)
    return out


# ---------------------------------------------------------------------------
# flow expression coefficients


def flow_coefficients(feeder: Feeder, line_idx: int, direction, phase: Phase, kind: str) -> dict:
    """Linear coefficients of the active ('P') or reactive ('Q') flow.

    Returns a map from variable names (u of the sending node, c/e of the
    same-bus and cross-bus paths) to their coefficients in the flow
    expression for the given line direction and phase.
    """
    line = feeder.lines[line_idx]
    i_bus, j_bus = direction
    if {i_bus, j_bus} != {line.from_bus, line.to_bus}:
        raise ValueError(f"direction {direction} does not match line {line.from_bus}-{line.to_bus}")
    if phase not in line.phases:
        raise ValueError(f"phase {phase.value} absent on line {line.from_bus}-{line.to_bus}")

    coeffs: dict = {}

    def bump(name, val):
        if val != 0.0:
            coeffs[name] = coeffs.get(name, 0.0) + val

    node_i = NodeRef(i_bus, phase)
    g_self, b_self = line.admittance((phase, phase))
    if kind == "P":
        bump(vn_u(node_i), g_self)
    else:
        bump(vn_u(node_i), -b_self)
    for ph2 in line.phases:
        g, b = line.admittance((phase, ph2))
        if ph2 is not phase:
            same = (node_i, NodeRef(i_bus, ph2))
            if kind == "P":
                bump(vn_c(same), g)
                bump(vn_e(same), b)
            else:
                bump(vn_e(same), g)
                bump(vn_c(same), -b)
        cross = (node_i, NodeRef(j_bus, ph2))
        if kind == "P":
            bump(vn_c(cross), -g)
            bump(vn_e(cross), -b)
        else:
            bump(vn_e(cross), -g)
            bump(vn_c(cross), b)
    return coeffs


def aux_values_from_state(feeder: Feeder, state: VoltageState) -> dict:
    """u, c, e values implied by a voltage state via their definitions."""
    values = {}
    for node in feeder.nodes:
        values[vn_u(node)] = state.mag[node] ** 2
    for path in enumerate_aux_paths(feeder):
        a, b = path
        prod = state.mag[a] * state.mag[b]
        dth = state.ang[a] - state.ang[b]
        values[vn_c(path)] = prod * math.cos(dth)
        values[vn_e(path)] = prod * math.sin(dth)
    return values


# ---------------------------------------------------------------------------
# base point and Taylor rows


@dataclass
class BasePoint:
    """Expansion point of all first-order linearizations."""

    u0: dict  # NodeRef -> squared magnitude
    th0: dict  # NodeRef -> radians
    vset0: dict = field(default_factory=dict)  # pv index -> (v1, v2, v3, v4)
    q0: dict = field(default_factory=dict)  # pv index -> reactive setting

    @classmethod
    def from_state(cls, state: VoltageState, vset0=None, q0=None):
        u0 = {n: m * m for n, m in state.mag.items()}
        return cls(u0=u0, th0=dict(state.ang), vset0=dict(vset0 or {}), q0=dict(q0 or {}))

    def validate(self):
        for node, u in self.u0.items():
            if u <= 0.0:
                raise SolutionError(f"non-positive base squared magnitude at {node}")


def taylor_bounds(path: AuxPath, bp: BasePoint):
    """The two linear equality rows bounding c and e around the base point.

    Each row is (coeffs, rhs) with the c (resp. e) variable carrying
    coefficient 1, expressed affinely in u at both endpoints and the angle
    difference, with coefficients exactly as the first-order expansion of
    the product definitions.
    """
    a, b = path
    u0i, u0j = bp.u0[a], bp.u0[b]
    if u0i <= 0.0 or u0j <= 0.0:
        raise SolutionError(f"non-positive base squared magnitude on path {a}|{b}")
    dth0 = bp.th0[a] - bp.th0[b]
    root = math.sqrt(u0i * u0j)
    cos0, sin0 = math.cos(dth0), math.sin(dth0)
    ki = math.sqrt(u0j) / (2.0 * math.sqrt(u0i))
    kj = math.sqrt(u0i) / (2.0 * math.sqrt(u0j))

    c_row = (
        {
            vn_c(path): 1.0,
            vn_u(a): -ki * cos0,
            vn_u(b): -kj * cos0,
            vn_th(a): root * sin0,
            vn_th(b): -root * sin0,
        },
        root * dth0 * sin0,
    )
    e_row = (
        {
            vn_e(path): 1.0,
            vn_u(a): -ki * sin0,
            vn_u(b): -kj * sin0,
            vn_th(a): -root * cos0,
            vn_th(b): root * cos0,
        },
        -root * dth0 * cos0,
    )
    return c_row, e_row


def add_taylor_rows(model: ConicModel, feeder: Feeder, bp: BasePoint):
    """Taylor rows for every canonical path (reverse paths follow from the
    symmetry couplings already in the base model)."""
    for path in canonical_paths(feeder):
        c_row, e_row = taylor_bounds(path, bp)
        model.add_eq(*c_row)
        model.add_eq(*e_row)


def add_soc_cone(model: ConicModel, path: AuxPath) -> bool:
    """Rotated cone c^2 + e^2 <= u_i * u_j for a path; idempotent."""
    p = canonical(path)
    key = f"soc[{p[0]}|{p[1]}]"
    return model.add_rotated_cone(
        key,
        fs=[({vn_c(p): 1.0}, 0.0), ({vn_e(p): 1.0}, 0.0)],
        a=({vn_u(p[0]): 1.0}, 0.0),
        b=({vn_u(p[1]): 1.0}, 0.0),
    )


# ---------------------------------------------------------------------------
# base model

RELAXED_V_MAX = 2.0  # p.u. magnitude cap when the upper limit is relaxed


def build_base_model(feeder: Feeder, fix_all_pv: bool = False, relax_upper: bool = False) -> ConicModel:
    """Flow definitions, symmetry couplings, balances, bounds, objective.

    No Taylor rows and no SOC cones yet; PV units without Volt-VAR control
    (or all units when ``fix_all_pv``) are fixed at (p_max, 0).
    """
    model = ConicModel()
    sub = feeder.substation

    for node in feeder.nodes:
        if feeder.is_substation_node(node):
            model.add_var(vn_u(node))
            model.add_var(vn_th(node))
            model.add_eq({vn_u(node): 1.0}, sub.v_mag[node] ** 2)
            model.add_eq({vn_th(node): 1.0}, sub.v_ang[node])
        else:
            lo, hi = feeder.v_limits[node]
            if relax_upper:
                hi = RELAXED_V_MAX
            model.add_var(vn_u(node), lb=lo * lo, ub=hi * hi)
            model.add_var(vn_th(node))

    all_paths = enumerate_aux_paths(feeder)
    for path in all_paths:
        model.add_var(vn_c(path))
        model.add_var(vn_e(path))
    # Symmetry couplings: c_ij = c_ji, e_ij = -e_ji, once per unordered pair.
    for path in all_paths:
        if canonical(path) != path:
            rev = (path[1], path[0])
            model.add_eq({vn_c(path): 1.0, vn_c(rev): -1.0}, 0.0)
            model.add_eq({vn_e(path): 1.0, vn_e(rev): 1.0}, 0.0)

    for idx, line in enumerate(feeder.lines):
        for direction in ((line.from_bus, line.to_bus), (line.to_bus, line.from_bus)):
            for phase in line.phases:
                for kind in ("P", "Q"):
                    name = model.add_var(vn_flow(kind, idx, direction, phase))
                    coeffs = dict(flow_coefficients(feeder, idx, direction, phase, kind))
                    coeffs[name] = coeffs.get(name, 0.0) - 1.0
                    model.add_eq(coeffs, 0.0)

    for node in sub.nodes:
        model.add_var(vn_grid("P", node))
        model.add_var(vn_grid("Q", node))

    objective = {}
    obj_const = 0.0
    scale = feeder.power_base_mva  # per-unit power -> MW; prices are per MWh
    for node in sub.nodes:
        objective[vn_grid("P", node)] = feeder.price_grid * scale

    for k, pv in enumerate(feeder.pv_units):
        p_name = model.add_var(vn_pv("P", k), lb=0.0, ub=pv.p_max)
        q_name = model.add_var(vn_pv("Q", k), lb=-pv.s_max, ub=pv.s_max)
        if fix_all_pv or not pv.has_vvc:
            model.add_eq({p_name: 1.0}, pv.p_max)
            model.add_eq({q_name: 1.0}, 0.0)
        objective[p_name] = feeder.price_pv * scale
        load = feeder.load_at(pv.node)
        if load is not None:
            obj_const -= feeder.price_pv * scale * load.p

    for node in feeder.nodes:
        p_row: dict = {}
        q_row: dict = {}
        for line, other in feeder.lines_at(node):
            idx = feeder.lines.index(line)
            p_row[vn_flow("P", idx, (node.bus, other), node.phase)] = -1.0
            q_row[vn_flow("Q", idx, (node.bus, other), node.phase)] = -1.0
        if feeder.is_substation_node(node):
            p_row[vn_grid("P", node)] = 1.0
            q_row[vn_grid("Q", node)] = 1.0
        for k, pv in enumerate(feeder.pv_units):
            if pv.node == node:
                p_row[vn_pv("P", k)] = 1.0
                q_row[vn_pv("Q", k)] = 1.0
        load = feeder.load_at(node)
        p_d = load.p if load is not None else 0.0
        q_d = load.q if load is not None else 0.0
        model.add_eq(p_row, p_d)
        model.add_eq(q_row, q_d)

    model.set_objective(objective, obj_const)
    return model


# ---------------------------------------------------------------------------
# solutions


@dataclass
class OPFSolution:
    """Values of all model variables plus recovered physical quantities."""

    values: dict
    u: dict  # NodeRef -> squared magnitude
    theta: dict  # NodeRef -> radians
    mag: dict  # NodeRef -> magnitude (sqrt of clamped u)
    flows: dict  # (line_idx, direction, phase) -> (p, q)
    grid_p: dict  # NodeRef -> p.u.
    grid_q: dict
    pv_p: dict  # pv index -> p.u.
    pv_q: dict
    objective: float

    def voltage_state(self) -> VoltageState:
        return VoltageState(dict(self.mag), dict(self.theta))

    def net_injections(self, feeder: Feeder) -> dict:
        inj = {n: 0j for n in feeder.nodes}
        for node in feeder.substation.nodes:
            inj[node] += complex(self.grid_p[node], self.grid_q[node])
        for k, pv in enumerate(feeder.pv_units):
            inj[pv.node] += complex(self.pv_p[k], self.pv_q[k])
        for load in feeder.loads:
            inj[load.node] -= complex(load.p, load.q)
        return inj


def recover_voltages(u: dict, theta: dict) -> tuple[dict, dict]:
    """mag = sqrt(u) with clamping of slightly negative solver noise."""
    mag = {}
    for node, val in u.items():
        if val < -NEG_U_CLAMP:
            raise SolutionError(f"negative squared magnitude {val} at {node}")
        if val < 0.0:
            warnings.warn(f"clamping u={val} to 0 at {node}", stacklevel=2)
            val = 0.0
        mag[node] = math.sqrt(val)
    return mag, dict(theta)


def extract_solution(feeder: Feeder, values: dict, objective: float) -> OPFSolution:
    u = {n: values[vn_u(n)] for n in feeder.nodes}
    theta = {n: values[vn_th(n)] for n in feeder.nodes}
    mag, ang = recover_voltages(u, theta)
    flows = {}
    for idx, line in enumerate(feeder.lines):
        for direction in ((line.from_bus, line.to_bus), (line.to_bus, line.from_bus)):
            for phase in line.phases:
                flows[(idx, direction, phase)] = (
                    values[vn_flow("P", idx, direction, phase)],
                    values[vn_flow("Q", idx, direction, phase)],
                )
    grid_p = {n: values[vn_grid("P", n)] for n in feeder.substation.nodes}
    grid_q = {n: values[vn_grid("Q", n)] for n in feeder.substation.nodes}
    pv_p = {k: values[vn_pv("P", k)] for k in range(len(feeder.pv_units))}
    pv_q = {k: values[vn_pv("Q", k)] for k in range(len(feeder.pv_units))}
    return OPFSolution(
        values=dict(values),
        u=u,
        theta=theta,
        mag=mag,
        flows=flows,
        grid_p=grid_p,
        grid_q=grid_q,
        pv_p=pv_p,
        pv_q=pv_q,
        objective=objective,
    )


def soc_error(sol: OPFSolution, path: AuxPath) -> float:
    """Signed relaxation error u_i*u_j - c^2 - e^2 on a path."""
    a, b = path
    c = sol.values[vn_c(path)]
    e = sol.values[vn_e(path)]
    return sol.u[a] * sol.u[b] - c * c - e * e


def linearization_error(sol: OPFSolution, path: AuxPath) -> tuple[float, float]:
    """|c - sqrt(u_i u_j) cos(dth)| and the sine analogue at the solution."""
    a, b = path
    prod = math.sqrt(max(sol.u[a], 0.0) * max(sol.u[b], 0.0))
    dth = sol.theta[a] - sol.theta[b]
    dc = abs(sol.values[vn_c(path)] - prod * math.cos(dth))
    de = abs(sol.values[vn_e(path)] - prod * math.sin(dth))
    return dc, de


def error_table(feeder: Feeder, sol: OPFSolution) -> list:
    """One record per ordered path: (from, to, soc_error, dc, de)."""
    rows = []
    for path in enumerate_aux_paths(feeder):
        dc, de = linearization_error(sol, path)
        rows.append((str(path[0]), str(path[1]), soc_error(sol, path), dc, de))
    return rows
