"""Summary metrics for comparing controller-setting policies."""

from __future__ import annotations

from .network import Feeder
from .socp import OPFSolution


def cost_saving(default_cost: float, optimal_cost: float) -> float:
    """Relative cost reduction of optimal over default settings, percent.

    Normalized by the magnitude of the default cost so the sign convention
    (positive = improvement) survives net-export snapshots where the
    baseline is already negative.
    """
    if default_cost == 0.0:
        raise ValueError("default cost must be nonzero")
    return (default_cost - optimal_cost) / abs(default_cost) * 100.0


def curtailment_percent(p_available_kw: float, p_dispatched_kw: float) -> float:
    """Share of available VVC-unit active power that was curtailed, percent.

    Dispatched values a hair outside [0, available] are clamped; conic
    feasibility noise scales with the power base and easily exceeds a fixed
    absolute slack in kW.
    """
    if p_available_kw <= 0.0:
        raise ValueError("available power must be positive")
    tol = 1e-6 * p_available_kw
    if not (-tol <= p_dispatched_kw <= p_available_kw + tol):
        raise ValueError("dispatched power must lie in [0, available]")
    p_dispatched_kw = min(max(p_dispatched_kw, 0.0), p_available_kw)
    return (p_available_kw - p_dispatched_kw) / p_available_kw * 100.0


def vvc_dispatch_kw(feeder: Feeder, sol: OPFSolution) -> tuple[float, float]:
    """(available, dispatched) active power of all VVC units in kW."""
    scale = feeder.power_base_mva * 1000.0
    avail = 0.0
    disp = 0.0
    for k, pv in enumerate(feeder.pv_units):
        if pv.has_vvc:
            avail += pv.p_max * scale
            disp += sol.pv_p[k] * scale
    return avail, disp
