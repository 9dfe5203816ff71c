"""Exact nonlinear three-phase power flow, used as the verification oracle.

The solver is an implicit Z-bus (Gauss) iteration on the full complex nodal
admittance matrix; its only contract is the residual bound on the nodal
complex-power mismatch.  All functions here are pure over immutable inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import Feeder, LineBlock, NodeRef, Phase, VoltageState, flat_start


class PowerFlowError(RuntimeError):
    """Power-flow iteration failed to meet the residual bound."""


def branch_flow(v: VoltageState, line: LineBlock, direction: tuple[str, str], phase: Phase):
    """Exact complex power flow (p, q) on one phase of a line.

    ``direction`` is the ordered (from_bus, to_bus) pair; mutual-coupling
    terms over the other phases of the line are included.
    """
    i_bus, j_bus = direction
    if {i_bus, j_bus} != {line.from_bus, line.to_bus}:
        raise ValueError(f"direction {direction} does not match line {line.from_bus}-{line.to_bus}")
    if phase not in line.phases:
        raise ValueError(f"phase {phase.value} not present on line {line.from_bus}-{line.to_bus}")
    vi = v.phasor(NodeRef(i_bus, phase))
    total = 0j
    for ph2 in line.phases:
        y = complex(*line.admittance((phase, ph2)))
        vdrop = v.phasor(NodeRef(i_bus, ph2)) - v.phasor(NodeRef(j_bus, ph2))
        total += vdrop * y
    s = vi * np.conj(total)
    return float(s.real), float(s.imag)


def _node_index(feeder: Feeder):
    nodes = list(feeder.nodes)
    return nodes, {n: i for i, n in enumerate(nodes)}


def bus_admittance(feeder: Feeder) -> tuple[np.ndarray, list]:
    """Complex nodal admittance matrix over all (bus, phase) nodes."""
    nodes, idx = _node_index(feeder)
    n = len(nodes)
    y = np.zeros((n, n), dtype=complex)
    for line in feeder.lines:
        for pa in line.phases:
            for pb in line.phases:
                yab = complex(*line.admittance((pa, pb)))
                fi = idx[NodeRef(line.from_bus, pa)]
                fj = idx[NodeRef(line.from_bus, pb)]
                ti = idx[NodeRef(line.to_bus, pa)]
                tj = idx[NodeRef(line.to_bus, pb)]
                y[fi, fj] += yab
                y[fi, tj] -= yab
                y[ti, tj] += yab
                y[ti, fj] -= yab
    return y, nodes


def _injections(feeder: Feeder, pv_injections) -> dict:
    """Net complex injection per node (PV minus demand), per-unit."""
    inj = {n: 0j for n in feeder.nodes}
    for load in feeder.loads:
        inj[load.node] -= complex(load.p, load.q)
    if pv_injections is None:
        pv_injections = [None] * len(feeder.pv_units)
    if len(pv_injections) != len(feeder.pv_units):
        raise ValueError("pv_injections must align with feeder.pv_units")
    for pv, given in zip(feeder.pv_units, pv_injections):
        if given is None:
            p, q = pv.p_max, 0.0
        else:
            p, q = given
        inj[pv.node] += complex(p, q)
    return inj


def solve_power_flow(
    feeder: Feeder,
    pv_injections=None,
    tol: float = 1e-10,
    max_iter: int = 200,
    initial: VoltageState | None = None,
) -> VoltageState:
    """Solve the nonlinear power flow; residual bound ``tol`` on mismatch.

    ``pv_injections`` is a sequence aligned with ``feeder.pv_units`` of
    (p, q) pairs; ``None`` entries inject (p_max, 0) as non-dispatchable
    units do.
    """
    y, nodes = bus_admittance(feeder)
    idx = {n: i for i, n in enumerate(nodes)}
    sub_ids = [idx[n] for n in feeder.substation.nodes]
    free_ids = [i for i, n in enumerate(nodes) if not feeder.is_substation_node(n)]
    inj = _injections(feeder, pv_injections)
    s_spec = np.array([inj[nodes[i]] for i in free_ids])

    state = initial.copy() if initial is not None else flat_start(feeder)
    v = np.array([state.phasor(n) for n in nodes])
    v_sub = v[sub_ids]

    y_ff = y[np.ix_(free_ids, free_ids)]
    y_fs = y[np.ix_(free_ids, sub_ids)]
    if free_ids:
        lu = np.linalg.inv(y_ff)  # small dense systems; explicit inverse is fine

    worst = 0.0
    for _ in range(max_iter):
        v_free = v[free_ids]
        mism = s_spec - v_free * np.conj(y_ff @ v_free + y_fs @ v_sub)
        worst = float(np.max(np.abs(mism))) if free_ids else 0.0
        if worst <= tol:
            mag = {n: float(abs(v[idx[n]])) for n in nodes}
            ang = {n: float(np.angle(v[idx[n]])) for n in nodes}
            return VoltageState(mag, ang)
        i_free = np.conj(s_spec / v_free)
        v[free_ids] = lu @ (i_free - y_fs @ v_sub)
    raise PowerFlowError(f"no convergence after {max_iter} iterations; worst mismatch {worst:.3e} p.u.")


def nodal_mismatch(feeder: Feeder, state: VoltageState, injections: dict) -> dict:
    """Complex power-balance residual per node from exact branch flows.

    ``injections`` maps NodeRef to net complex injection (generation minus
    demand) claimed by a solution.
    """
    out = {}
    for node in feeder.nodes:
        flow = 0j
        for line, other in feeder.lines_at(node):
            p, q = branch_flow(state, line, (node.bus, other), node.phase)
            flow += complex(p, q)
        out[node] = injections.get(node, 0j) - flow
    return out


@dataclass
class VerificationReport:
    max_flow_mismatch: float
    max_balance_residual: float
    tol: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "max_flow_mismatch": self.max_flow_mismatch,
                "max_balance_residual": self.max_balance_residual,
                "tol": self.tol,
                "pass": self.passed,
            },
            indent=2,
            sort_keys=True,
        )


def verify_opf_solution(feeder: Feeder, sol, tol: float = 1e-4) -> VerificationReport:
    """Re-evaluate a model solution against the exact flow equations.

    ``sol`` is an OPFSolution carrying recovered voltages, per-line-phase
    model flows and nodal injections.  Flows are recomputed with
    :func:`branch_flow` from the recovered voltages and compared against the
    model's flow variables; nodal balance uses the model's injections.
    """
    state = sol.voltage_state()
    worst_flow = 0.0
    for (line_idx, direction, phase), (p_model, q_model) in sol.flows.items():
        line = feeder.lines[line_idx]
        p_exact, q_exact = branch_flow(state, line, direction, phase)
        worst_flow = max(worst_flow, abs(p_model - p_exact), abs(q_model - q_exact))
    mism = nodal_mismatch(feeder, state, sol.net_injections(feeder))
    worst_bal = max((abs(v) for v in mism.values()), default=0.0)
    passed = worst_flow <= tol and worst_bal <= tol
    return VerificationReport(worst_flow, worst_bal, tol, passed)
