"""Convex conic optimal power flow for unbalanced distribution feeders.

The package solves three-phase AC optimal power flow through a sequential
second-order-cone relaxation and schedules smart-inverter Volt-VAR
controllers, either with their standard default curve or with the curve
breakpoints co-optimized as part of a mixed-integer conic program.  An
independent fixed-point nonlinear power flow verifies every solution.
"""

from .conic import ConicModel, ModelError, SolverResult, solve_misocp, solve_socp
from .dynamics import Event, TimeSeries, default_schedule, simulate, stability_verdict
from .metrics import cost_saving, curtailment_percent, vvc_dispatch_kw
from .network import (
    Feeder,
    FeederError,
    Load,
    NodeRef,
    Phase,
    PVUnit,
    VoltageState,
    load_feeder,
    parse_feeder,
    serialize_feeder,
)
from .powerflow import (
    PowerFlowError,
    VerificationReport,
    branch_flow,
    solve_power_flow,
    verify_opf_solution,
)
from .socp import BasePoint, OPFSolution, build_base_model, error_table, extract_solution
from .solver import (
    InfeasibleError,
    SolveOptions,
    SolveReport,
    SolverFailure,
    two_stage_solve,
)
from .vvc import VVCSettings, default_settings, qv_reactive, zone_of

__all__ = [
    "BasePoint",
    "ConicModel",
    "Event",
    "Feeder",
    "FeederError",
    "InfeasibleError",
    "Load",
    "ModelError",
    "NodeRef",
    "OPFSolution",
    "PVUnit",
    "Phase",
    "PowerFlowError",
    "SolveOptions",
    "SolveReport",
    "SolverFailure",
    "SolverResult",
    "TimeSeries",
    "VVCSettings",
    "VerificationReport",
    "VoltageState",
    "branch_flow",
    "build_base_model",
    "cost_saving",
    "curtailment_percent",
    "default_schedule",
    "default_settings",
    "error_table",
    "extract_solution",
    "load_feeder",
    "parse_feeder",
    "qv_reactive",
    "serialize_feeder",
    "simulate",
    "solve_misocp",
    "solve_power_flow",
    "solve_socp",
    "stability_verdict",
    "two_stage_solve",
    "verify_opf_solution",
    "vvc_dispatch_kw",
    "zone_of",
]

__version__ = "0.1.0"
