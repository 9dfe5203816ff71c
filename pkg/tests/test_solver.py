import math

import pytest

from vvcopf import (
    InfeasibleError,
    SolveOptions,
    load_feeder,
    solve_power_flow,
    two_stage_solve,
    verify_opf_solution,
)
from vvcopf.network import NodeRef, Phase, VoltageState, flat_start
from vvcopf.socp import BasePoint
from vvcopf.solver import (
    initial_base_point,
    solved_settings,
    stage1_converged,
    update_base_points,
)

N2 = NodeRef("2", Phase.A)


def test_options_validation():
    with pytest.raises(ValueError, match="mode"):
        SolveOptions(mode="bogus")
    with pytest.raises(ValueError, match="tolerances"):
        SolveOptions(eps_cone=0.0)
    with pytest.raises(ValueError, match="caps"):
        SolveOptions(max_outer=0)
    with pytest.raises(ValueError, match="warm"):
        SolveOptions(initial_point="warm_voltage_state")


def test_stage1_converged_strict():
    a = VoltageState({N2: 1.0}, {N2: 0.0})
    b = VoltageState({N2: 1.0 + 5e-7}, {N2: 0.0})
    c = VoltageState({N2: 1.0 + 2e-6}, {N2: 0.0})
    assert stage1_converged(a, b, 1e-6)
    assert not stage1_converged(a, c, 1e-6)
    with pytest.raises(ValueError, match="node sets"):
        stage1_converged(a, VoltageState({}, {}), 1e-6)


def test_initial_base_point_defaults(twobus):
    bp, state = initial_base_point(twobus, SolveOptions(mode="vvc_optimal"))
    assert bp.u0[N2] == pytest.approx(1.0)
    assert bp.vset0[0] == pytest.approx((0.94**2, 0.98**2, 1.02**2, 1.06**2))
    assert bp.q0[0] == pytest.approx(0.6 * 0.5)
    assert state.mag[N2] == 1.0


def test_damped_update_preserves_fixed_point(twobus):
    opts = SolveOptions(mode="no_vvc", relax_upper_voltage=True)
    sol, rep = two_stage_solve(twobus, opts)
    bp = BasePoint.from_state(sol.voltage_state())
    for alpha in (1.0, 0.5, 0.25):
        nxt = update_base_points(twobus, sol, bp, "no_vvc", alpha=alpha)
        for n in twobus.nodes:
            assert nxt.u0[n] == pytest.approx(bp.u0[n], abs=1e-9)


def test_no_vvc_matches_oracle_exactly(twobus):
    """With every injection fixed the relaxation must reproduce the exact
    power flow, so recovered voltages match the oracle to stage-1 accuracy."""
    sol, rep = two_stage_solve(twobus, SolveOptions(mode="no_vvc", relax_upper_voltage=True))
    assert rep.converged
    exact = solve_power_flow(twobus)
    for n in twobus.nodes:
        assert sol.mag[n] == pytest.approx(exact.mag[n], abs=1e-6)
    assert sol.mag[N2] == pytest.approx(1.0829024523620034, abs=1e-6)


def test_no_vvc_objective_value(twobus):
    # Grid import is negative (net export); objective in currency per hour:
    # 55.71 * 0.01 * Pg + 21.79 * 0.01 * (Ppv - 0.05) with Ppv = 0.4.
    sol, rep = two_stage_solve(twobus, SolveOptions(mode="no_vvc", relax_upper_voltage=True))
    pg = sum(sol.grid_p.values())
    expected = 55.71 * 0.01 * pg + 21.79 * 0.01 * (0.4 - 0.05)
    assert rep.objective == pytest.approx(expected, abs=1e-9)


def test_infeasible_bounds_raise(twobus):
    with pytest.raises(InfeasibleError):
        two_stage_solve(twobus, SolveOptions(mode="no_vvc"))


def test_vvc_requires_unit(fourbus):
    import dataclasses

    stripped = dataclasses.replace(fourbus, pv_units=())
    with pytest.raises(ValueError, match="requires at least one"):
        two_stage_solve(stripped, SolveOptions(mode="vvc_default"))


def test_default_mode_binds_voltage(twobus):
    sol, rep = two_stage_solve(twobus, SolveOptions(mode="vvc_default"))
    assert rep.converged
    assert sol.mag[N2] == pytest.approx(1.05, abs=1e-6)
    rec = rep.zone_records[0]
    assert rec["active_zone"] == 4
    assert rec["consistent"]
    # Zone-4 droop at the binding voltage, defaults with q_max = 0.3.
    expected_q = 0.3 * (1.05**2 - 1.02**2) / (1.02**2 - 1.06**2)
    assert sol.pv_q[0] == pytest.approx(expected_q, abs=1e-6)
    assert verify_opf_solution(twobus, sol).passed


def test_optimal_dominates_default(twobus):
    _, rep_d = two_stage_solve(twobus, SolveOptions(mode="vvc_default"))
    sol_o, rep_o = two_stage_solve(twobus, SolveOptions(mode="vvc_optimal"))
    assert rep_d.converged and rep_o.converged
    assert rep_o.objective <= rep_d.objective + 1e-7
    settings = solved_settings(twobus, sol_o, "vvc_optimal")[0]
    assert settings.v1 >= 0.82**2 - 1e-7
    assert settings.v4 <= 1.18**2 + 1e-7
    assert 0.0 <= settings.q_max <= twobus.pv_units[0].s_max + 1e-9


def test_report_serializes(twobus):
    import json

    _, rep = two_stage_solve(twobus, SolveOptions(mode="vvc_default"))
    doc = json.loads(rep.to_json())
    assert doc["mode"] == "vvc_default"
    assert doc["converged"] is True
    assert doc["max_soc_error"] < 1e-8
    assert doc["pv_dispatch_kw"]["0"] > 0.0


def test_warm_start_converges_faster(twobus):
    sol, rep_cold = two_stage_solve(twobus, SolveOptions(mode="no_vvc", relax_upper_voltage=True))
    warm = SolveOptions(
        mode="no_vvc",
        relax_upper_voltage=True,
        initial_point="warm_voltage_state",
        warm_state=sol.voltage_state(),
    )
    _, rep_warm = two_stage_solve(twobus, warm)
    assert rep_warm.converged
    assert rep_warm.stage1_iterations <= rep_cold.stage1_iterations
