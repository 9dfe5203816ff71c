"""Two-stage sequential-linearization driver for the SOCP/MISOCP ACOPF.

Stage 1 re-solves the conic model while updating all Taylor base points
(voltages, and controller settings in co-optimized mode) until successive
voltage solutions agree.  Stage 2 checks the SOC relaxation errors on every
path, lazily adds violated cones, and loops back; linearization errors are
checked alongside.  The cone set only grows, so the loop terminates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .conic import solve_misocp, solve_socp
from .network import Feeder, VoltageState, flat_start
from .socp import (
    BasePoint,
    OPFSolution,
    add_soc_cone,
    add_taylor_rows,
    build_base_model,
    canonical_paths,
    extract_solution,
    linearization_error,
    soc_error,
    vn_u,
)
from . import vvc as vvc_mod
from .vvc import (
    VVCSettings,
    add_default_vvc,
    add_optimal_vvc,
    check_zone_consistency,
    default_settings,
    f_exact,
    linearize_f,
)

MODES = ("no_vvc", "vvc_default", "vvc_optimal")


class InfeasibleError(RuntimeError):
    """The conic model has no feasible point (e.g. unattainable voltage bounds)."""


class SolverFailure(RuntimeError):
    """Numerical failure inside the conic backend."""


@dataclass
class SolveOptions:
    mode: str = "no_vvc"
    eps_stage1: float = 1e-6  # p.u. and rad, strict
    eps_cone: float = 1e-8
    eps_lin: float = 1e-6
    # The droop-term expansion error bounds a reactive-power mismatch; the
    # co-optimized settings are degenerate at many optima (several setting
    # vectors produce the same Q), so this cannot be pushed as tight as the
    # voltage-product linearization without cycling.
    eps_droop: float = 1e-4
    max_outer: int = 10
    max_stage1: int = 30
    initial_point: str = "flat_start"  # or "warm_voltage_state"
    warm_state: Optional[VoltageState] = None
    relax_upper_voltage: bool = False
    mip_gap: float = 1e-6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.eps_stage1, self.eps_cone, self.eps_lin, self.eps_droop) <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.max_stage1 < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.initial_point == "warm_voltage_state" and self.warm_state is None:
            raise ValueError("warm start requested without a warm_state")


@dataclass
class SolveReport:
    mode: str
    converged: bool
    failure: Optional[str]
    objective: Optional[float]  # currency per hour for the snapshot
    outer_iterations: int
    stage1_iterations: int
    cones_added: int
    max_soc_error: Optional[float]
    max_lin_error_c: Optional[float]
    max_lin_error_e: Optional[float]
    max_f_error: Optional[float]
    trace: list = field(default_factory=list)
    zone_records: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)  # pv index -> settings dict
    pv_dispatch_kw: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "converged": self.converged,
            "failure": self.failure,
            "objective_per_hour": self.objective,
            "outer_iterations": self.outer_iterations,
            "stage1_iterations": self.stage1_iterations,
            "cones_added": self.cones_added,
            "max_soc_error": self.max_soc_error,
            "max_lin_error_c": self.max_lin_error_c,
            "max_lin_error_e": self.max_lin_error_e,
            "max_f_error": self.max_f_error,
            "trace": self.trace,
            "zone_records": self.zone_records,
            "settings": self.settings,
            "pv_dispatch_kw": self.pv_dispatch_kw,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def stage1_converged(prev: VoltageState, cur: VoltageState, eps: float) -> bool:
    """True iff max magnitude and angle changes are strictly below eps."""
    if set(prev.mag) != set(cur.mag):
        raise ValueError("voltage states cover different node sets")
    dmag = max(abs(cur.mag[n] - prev.mag[n]) for n in cur.mag)
    dang = max(abs(cur.ang[n] - prev.ang[n]) for n in cur.ang)
    return dmag < eps and dang < eps


def _vvc_indices(feeder: Feeder) -> list:
    return [k for k, pv in enumerate(feeder.pv_units) if pv.has_vvc]


def initial_base_point(feeder: Feeder, opts: SolveOptions) -> BasePoint:
    if opts.initial_point == "warm_voltage_state":
        state = opts.warm_state
    else:
        state = flat_start(feeder)
    vset0, q0 = {}, {}
    for k in _vvc_indices(feeder):
        s = default_settings(feeder.pv_units[k].s_max)
        vset0[k] = s.breakpoints()
        q0[k] = s.q_max
    return BasePoint.from_state(state, vset0=vset0, q0=q0), state


def update_base_points(
    feeder: Feeder,
    sol: OPFSolution,
    prev: BasePoint,
    mode: str,
    alpha: float = 1.0,
) -> BasePoint:
    """Update of voltage and (in optimal mode) setting bases.

    ``alpha`` blends the new iterate with the previous expansion point
    (1.0 replaces it outright).  Damping leaves fixed points unchanged but
    breaks the period-two cycles the plain substitution can fall into.
    """

    def mix(new, old):
        return alpha * new + (1.0 - alpha) * old

    u0 = {n: mix(sol.u[n], prev.u0.get(n, sol.u[n])) for n in sol.u}
    th0 = {n: mix(sol.theta[n], prev.th0.get(n, sol.theta[n])) for n in sol.theta}
    vset0 = dict(prev.vset0)
    q0 = dict(prev.q0)
    if mode == "vvc_optimal":
        for k in _vvc_indices(feeder):
            new_v = tuple(sol.values[f"vset[{n},{k}]"] for n in range(1, 5))
            vset0[k] = tuple(mix(nv, ov) for nv, ov in zip(new_v, prev.vset0[k]))
            q0[k] = mix(sol.values[f"qset[{k}]"], prev.q0[k])
    return BasePoint(u0=u0, th0=th0, vset0=vset0, q0=q0)


def assemble_model(feeder: Feeder, bp: BasePoint, opts: SolveOptions, cones):
    model = build_base_model(
        feeder,
        fix_all_pv=(opts.mode == "no_vvc"),
        relax_upper=opts.relax_upper_voltage,
    )
    add_taylor_rows(model, feeder, bp)
    if opts.mode == "vvc_default":
        for k in _vvc_indices(feeder):
            add_default_vvc(model, feeder, k, default_settings(feeder.pv_units[k].s_max))
    elif opts.mode == "vvc_optimal":
        for k in _vvc_indices(feeder):
            add_optimal_vvc(model, feeder, k, bp)
    for path in cones:
        add_soc_cone(model, path)
    return model


def solved_settings(feeder: Feeder, sol: OPFSolution, mode: str) -> dict:
    """Settings in force per VVC unit: defaults, or the solved variables."""
    out = {}
    for k in _vvc_indices(feeder):
        if mode == "vvc_optimal":
            v1, v2, v3, v4 = (sol.values[f"vset[{n},{k}]"] for n in range(1, 5))
            out[k] = VVCSettings(
                v1=v1,
                v2=v2,
                v3=v3,
                v4=v4,
                q_max=max(sol.values[f"qset[{k}]"], 0.0),
                v_lo=min(vvc_mod.DEFAULT_V_CONT[0], v1 - 1e-9),
                v_hi=max(vvc_mod.DEFAULT_V_CONT[1], v4 + 1e-9),
            )
        else:
            out[k] = default_settings(feeder.pv_units[k].s_max)
    return out


def _f_errors(feeder: Feeder, model, sol: OPFSolution, bp: BasePoint) -> dict:
    """Per-unit |linearized - exact| droop term error at the solution, for
    units whose active zone is 2 or 4."""
    out = {}
    for pos, k in enumerate(_vvc_indices(feeder)):
        zone = vvc_mod.active_zone(sol.values, pos, model)
        if zone not in (2, 4):
            out[k] = 0.0
            continue
        which = "f2" if zone == 2 else "f4"
        coef = linearize_f(feeder, bp, k, which)
        u = sol.u[feeder.pv_units[k].node]
        qset = sol.values[f"qset[{k}]"]
        lo, hi = (1, 2) if zone == 2 else (3, 4)
        v_lo = sol.values[f"vset[{lo},{k}]"]
        v_hi = sol.values[f"vset[{hi},{k}]"]
        lin = (
            coef["q"] * qset
            + coef["u"] * u
            + coef["v_lo"] * v_lo
            + coef["v_hi"] * v_hi
            + coef["const"]
        )
        out[k] = abs(lin - f_exact(which, qset, u, v_lo, v_hi))
    return out


def two_stage_solve(feeder: Feeder, opts: SolveOptions):
    """Run the two-stage algorithm; returns (OPFSolution, SolveReport).

    Raises :class:`InfeasibleError` when the model is infeasible and
    :class:`SolverFailure` on backend breakdown; non-convergence returns
    the best iterate with ``report.converged == False``.
    """
    if opts.mode != "no_vvc" and not _vvc_indices(feeder):
        raise ValueError(f"mode {opts.mode} requires at least one PV unit with VVC")

    bp, prev_state = initial_base_point(feeder, opts)
    bp.validate()
    cones: list = []
    trace: list = []
    sol: Optional[OPFSolution] = None
    last_model = None
    failure: Optional[str] = None
    converged = False
    stage1_total = 0
    outer_done = 0
    max_soc = max_dc = max_de = max_f = None

    paths = None  # canonical paths, fixed per feeder

    for outer in range(1, opts.max_outer + 1):
        outer_done = outer
        stage1_ok = False
        prev_dmag = None
        for _ in range(opts.max_stage1):
            stage1_total += 1
            model = assemble_model(feeder, bp, opts, cones)
            last_model = model
            if model.binaries:
                result = solve_misocp(model, gap=opts.mip_gap)
            else:
                result = solve_socp(model)
            if result.status == "infeasible":
                raise InfeasibleError(
                    f"conic model infeasible in mode {opts.mode} "
                    f"(outer {outer}); voltage bounds may be unattainable"
                )
            if result.status != "optimal":
                raise SolverFailure(f"backend failure: {result.status}: {result.message}")
            sol = extract_solution(feeder, result.values, result.objective)
            cur_state = sol.voltage_state()
            dmag = max(abs(cur_state.mag[n] - prev_state.mag[n]) for n in cur_state.mag)
            dang = max(abs(cur_state.ang[n] - prev_state.ang[n]) for n in cur_state.ang)
            trace.append(
                {
                    "stage": 1,
                    "outer": outer,
                    "d_mag": dmag,
                    "d_ang": dang,
                    "objective": result.objective,
                }
            )
            done = stage1_converged(prev_state, cur_state, opts.eps_stage1)
            prev_state = cur_state
            if done:
                stage1_ok = True
                break
            # Damp the update when the iteration stops contracting.
            alpha = 0.5 if (prev_dmag is not None and dmag >= 0.9 * prev_dmag) else 1.0
            prev_dmag = dmag
            bp = update_base_points(feeder, sol, bp, opts.mode, alpha=alpha)
        if not stage1_ok:
            failure = f"stage-1 non-convergence after {opts.max_stage1} iterations"
            break

        if paths is None:
            paths = canonical_paths(feeder)
        errors = {p: soc_error(sol, p) for p in paths}
        max_soc = max((abs(v) for v in errors.values()), default=0.0)
        lin = [linearization_error(sol, p) for p in paths]
        max_dc = max((dc for dc, _ in lin), default=0.0)
        max_de = max((de for _, de in lin), default=0.0)
        if opts.mode == "vvc_optimal":
            f_errs = _f_errors(feeder, last_model, sol, bp)
            max_f = max(f_errs.values(), default=0.0)
        else:
            max_f = 0.0
        violating = [p for p in paths if abs(errors[p]) > opts.eps_cone]
        new_cones = [p for p in violating if p not in cones]
        trace.append(
            {
                "stage": 2,
                "outer": outer,
                "max_soc_error": max_soc,
                "max_lin_error_c": max_dc,
                "max_lin_error_e": max_de,
                "max_f_error": max_f,
                "cones_added": len(new_cones),
            }
        )
        if new_cones:
            cones.extend(new_cones)
            continue
        if max(max_dc, max_de) > opts.eps_lin or max_f > opts.eps_droop:
            # Cones are clean but the expansion point is stale; re-linearize.
            bp = update_base_points(feeder, sol, bp, opts.mode)
            continue
        converged = True
        break
    else:
        failure = f"outer-loop non-convergence after {opts.max_outer} passes"

    report = SolveReport(
        mode=opts.mode,
        converged=converged,
        failure=failure,
        objective=sol.objective if sol is not None else None,
        outer_iterations=outer_done,
        stage1_iterations=stage1_total,
        cones_added=len(cones),
        max_soc_error=max_soc,
        max_lin_error_c=max_dc,
        max_lin_error_e=max_de,
        max_f_error=max_f,
        trace=trace,
    )
    if sol is not None:
        mva = feeder.power_base_mva
        report.pv_dispatch_kw = {
            str(k): sol.pv_p[k] * mva * 1000.0 for k in range(len(feeder.pv_units))
        }
        if opts.mode in ("vvc_default", "vvc_optimal"):
            settings = solved_settings(feeder, sol, opts.mode)
            report.settings = {
                str(k): {
                    "v1": s.v1,
                    "v2": s.v2,
                    "v3": s.v3,
                    "v4": s.v4,
                    "q_max": s.q_max,
                }
                for k, s in settings.items()
            }
            tol = 1e-6 if opts.mode == "vvc_default" else 1e-6 + (max_f or 0.0)
            records = check_zone_consistency(feeder, last_model, sol.values, settings, tol=tol)
            report.zone_records = [
                {
                    "pv_index": r.pv_index,
                    "active_zone": r.active_zone,
                    "u": r.u,
                    "q": r.q,
                    "q_expected": r.q_expected,
                    "consistent": r.consistent,
                }
                for r in records
            ]
    return sol, report
