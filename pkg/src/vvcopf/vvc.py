"""Q-V characteristic of PV smart inverters and its mixed-integer encoding.

Covers the five-zone droop curve (defaults per IEEE 1547-2018 category
settings), the inverter capability cone, big-M zone constraints for fixed
settings, and the co-optimized-settings variant with linearized zone-2 and
zone-4 droop expressions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .conic import ConicModel
from .network import Feeder
from .socp import BasePoint, SolutionError, vn_pv, vn_u

#: Default squared breakpoints per IEEE 1547-2018.
DEFAULT_BREAKPOINTS = (0.94**2, 0.98**2, 1.02**2, 1.06**2)
#: Continuous-operation squared voltage window (configurable; the standard's
#: continuous range is used since the curve itself does not pin these).
DEFAULT_V_CONT = (0.88**2, 1.10**2)
#: Default reactive setting as a fraction of the apparent power rating.
DEFAULT_QMAX_FRACTION = 0.6

#: Allowable squared-breakpoint ranges for co-optimized settings.
SETTING_RANGES = {
    "v1_min": 0.82**2,
    "v2_min": 0.97**2,
    "v2_max": 1.0,
    "v3_min": 1.0,
    "v3_max": 1.03**2,
    "v4_max": 1.18**2,
    "deadband_gap": 0.04,  # v2 - v1 >= gap and v4 - v3 >= gap
}


class VVCError(ValueError):
    """Invalid controller settings or usage."""


@dataclass(frozen=True)
class VVCSettings:
    """Five-zone droop curve parameters in squared-voltage coordinates."""

    v1: float
    v2: float
    v3: float
    v4: float
    q_max: float
    v_lo: float = DEFAULT_V_CONT[0]
    v_hi: float = DEFAULT_V_CONT[1]

    def __post_init__(self):
        if not (self.v_lo < self.v1 < self.v2 <= self.v3 < self.v4 < self.v_hi):
            raise VVCError(
                f"breakpoints must satisfy v_lo < v1 < v2 <= v3 < v4 < v_hi, got "
                f"({self.v_lo}, {self.v1}, {self.v2}, {self.v3}, {self.v4}, {self.v_hi})"
            )
        if self.q_max < 0.0:
            raise VVCError("q_max must be nonnegative")

    def breakpoints(self):
        return (self.v1, self.v2, self.v3, self.v4)


def default_settings(s_max: float) -> VVCSettings:
    """Fixed default curve: standard breakpoints, q_max = 60% of rating."""
    if s_max <= 0.0:
        raise VVCError("s_max must be positive")
    v1, v2, v3, v4 = DEFAULT_BREAKPOINTS
    return VVCSettings(v1, v2, v3, v4, DEFAULT_QMAX_FRACTION * s_max)


def zone_of(u: float, s: VVCSettings) -> int:
    """Zone index 1..5 of a squared voltage; intervals half-open below."""
    if not (s.v_lo <= u < s.v_hi):
        raise VVCError(f"u={u} outside continuous-operation range [{s.v_lo}, {s.v_hi})")
    if u < s.v1:
        return 1
    if u < s.v2:
        return 2
    if u < s.v3:
        return 3
    if u < s.v4:
        return 4
    return 5


def qv_reactive(u: float, s: VVCSettings) -> float:
    """Droop reactive power at squared voltage u; continuous in u.

    Values outside the continuous-operation window are clamped onto it,
    which extends the flat outer zones indefinitely.
    """
    u = min(max(u, s.v_lo), s.v_hi - 1e-15)
    zone = zone_of(u, s)
    if zone == 1:
        return s.q_max
    if zone == 2:
        return s.q_max * (s.v2 - u) / (s.v2 - s.v1)
    if zone == 3:
        return 0.0
    if zone == 4:
        return s.q_max * (u - s.v3) / (s.v3 - s.v4)
    return -s.q_max


# ---------------------------------------------------------------------------
# big-M constants (per constraint class, not global)


def big_m_voltage(s: VVCSettings) -> float:
    return s.v_hi - s.v_lo + 0.1


def big_m_reactive(s_max: float) -> float:
    return 2.0 * s_max


# ---------------------------------------------------------------------------
# model builders


def _zone_vars(model: ConicModel, k: int) -> list:
    names = [model.add_var(f"z[{n},{k}]", binary=True) for n in range(1, 6)]
    model.zone_groups.append(names)
    return names


def add_capability(model: ConicModel, feeder: Feeder, k: int):
    """Apparent-power cone and active-power cap for a controllable unit."""
    pv = feeder.pv_units[k]
    if not pv.has_vvc:
        raise VVCError(f"pv unit {k} has no Volt-VAR controller")
    p, q = vn_pv("P", k), vn_pv("Q", k)
    model.add_rotated_cone(
        f"cap[{k}]",
        fs=[({p: 1.0}, 0.0), ({q: 1.0}, 0.0)],
        a=({}, pv.s_max),
        b=({}, pv.s_max),
    )
    # P in [0, p_max] is already a variable bound from the base model.


def add_default_vvc(model: ConicModel, feeder: Feeder, k: int, s: VVCSettings) -> list:
    """Fixed-settings zone constraints; returns the five binary names."""
    pv = feeder.pv_units[k]
    u = vn_u(pv.node)
    if not model.has_var(u):
        raise VVCError(f"model lacks voltage variable for {pv.node}")
    q = vn_pv("Q", k)
    u_ub = model.ub.get(u, 4.0)
    mv = max(big_m_voltage(s), u_ub - s.v_lo + 0.1)
    mq = big_m_reactive(pv.s_max)
    z1, z2, z3, z4, z5 = _zone_vars(model, k)

    def two_sided(expr: dict, center: float, z: str, m: float):
        lo = {n: -v for n, v in expr.items()}
        lo[z] = lo.get(z, 0.0) - m
        model.add_ineq(lo, -center)
        hi = dict(expr)
        hi[z] = hi.get(z, 0.0) - m
        model.add_ineq(hi, center)

    # Zone 1: u <= v1 (+slack); Q = q_max.
    model.add_ineq({u: 1.0, z1: -mv}, s.v1)
    two_sided({q: 1.0}, s.q_max, z1, mq)
    # Zone 2: v1 <= u <= v2; Q = slope2 * (v2 - u).
    model.add_ineq({u: -1.0, z2: -mv}, -s.v1)
    model.add_ineq({u: 1.0, z2: -mv}, s.v2)
    slope2 = s.q_max / (s.v2 - s.v1)
    two_sided({q: 1.0, u: slope2}, slope2 * s.v2, z2, mq)
    # Zone 3: v2 <= u <= v3; Q = 0.
    model.add_ineq({u: -1.0, z3: -mv}, -s.v2)
    model.add_ineq({u: 1.0, z3: -mv}, s.v3)
    two_sided({q: 1.0}, 0.0, z3, mq)
    # Zone 4: v3 <= u <= v4; Q = slope4 * (u - v3).
    model.add_ineq({u: -1.0, z4: -mv}, -s.v3)
    model.add_ineq({u: 1.0, z4: -mv}, s.v4)
    slope4 = s.q_max / (s.v3 - s.v4)
    two_sided({q: 1.0, u: -slope4}, -slope4 * s.v3, z4, mq)
    # Zone 5: v4 <= u; Q = -q_max.
    model.add_ineq({u: -1.0, z5: -mv}, -s.v4)
    two_sided({q: 1.0}, -s.q_max, z5, mq)
    # At least one zone active.
    model.add_ineq({z1: 1.0, z2: 1.0, z3: 1.0, z4: 1.0, z5: 1.0}, 4.0)

    add_capability(model, feeder, k)
    return [z1, z2, z3, z4, z5]


def linearize_f(feeder: Feeder, bp: BasePoint, k: int, which: str) -> dict:
    """First-order coefficients of the bilinear zone-2/zone-4 droop term.

    Returns {'q': .., 'u': .., 'v_lo': .., 'v_hi': .., 'const': 0.0} where
    v_lo/v_hi multiply the zone's lower/upper breakpoint variable (v1, v2
    for f2 and v3, v4 for f4).  The droop term is homogeneous of degree one,
    so the expansion constant vanishes identically.
    """
    if k not in bp.vset0 or k not in bp.q0:
        raise SolutionError(f"base point lacks settings for pv unit {k}")
    node = feeder.pv_units[k].node
    if node not in bp.u0:
        raise SolutionError(f"base point lacks voltage for {node}")
    v10, v20, v30, v40 = bp.vset0[k]
    if which == "f2":
        return _f_coefficients("f2", bp.q0[k], bp.u0[node], v10, v20)
    return _f_coefficients(which, bp.q0[k], bp.u0[node], v30, v40)


def _f_coefficients(which: str, q0: float, u0: float, lo0: float, hi0: float) -> dict:
    """Coefficients of f2/f4 at base (q0, u0, lo0, hi0)."""
    if which == "f2":
        den = hi0 - lo0  # v2 - v1
        if den == 0.0:
            raise VVCError("degenerate base point: v2 == v1")
        return {
            "q": (hi0 - u0) / den,
            "u": -q0 / den,
            "v_lo": q0 * (hi0 - u0) / den**2,
            "v_hi": -q0 * (lo0 - u0) / den**2,
            "const": 0.0,
        }
    if which == "f4":
        den = lo0 - hi0  # v3 - v4
        if den == 0.0:
            raise VVCError("degenerate base point: v3 == v4")
        return {
            "q": (u0 - lo0) / den,
            "u": q0 / den,
            "v_lo": q0 * (hi0 - u0) / den**2,
            "v_hi": q0 * (u0 - lo0) / den**2,
            "const": 0.0,
        }
    raise ValueError(f"unknown droop term {which!r}")


def f_exact(which: str, q: float, u: float, lo: float, hi: float) -> float:
    """The bilinear droop term itself (zone-2 or zone-4 branch value)."""
    if which == "f2":
        return q * (hi - u) / (hi - lo)
    if which == "f4":
        return q * (u - lo) / (lo - hi)
    raise ValueError(f"unknown droop term {which!r}")


def add_optimal_vvc(model: ConicModel, feeder: Feeder, k: int, bp: BasePoint) -> dict:
    """Co-optimized-settings zone constraints for one unit.

    Adds setting variables (squared breakpoints and the reactive setting),
    the zone implications with linearized zone-2/zone-4 droop expressions
    around the base point, the standard's allowable setting ranges, and the
    capability cone.  Returns the created variable names.
    """
    pv = feeder.pv_units[k]
    u = vn_u(pv.node)
    if not model.has_var(u):
        raise VVCError(f"model lacks voltage variable for {pv.node}")
    if k not in bp.vset0 or k not in bp.q0:
        raise SolutionError(f"base point lacks settings for pv unit {k}")
    if pv.node not in bp.u0:
        raise SolutionError(f"base point lacks voltage for {pv.node}")
    q = vn_pv("Q", k)
    u_ub = model.ub.get(u, 4.0)
    u_lb = model.lb.get(u, 0.0)
    mv = max(SETTING_RANGES["v4_max"], u_ub) - min(SETTING_RANGES["v1_min"], u_lb) + 0.1
    mq = big_m_reactive(pv.s_max)
    z1, z2, z3, z4, z5 = _zone_vars(model, k)

    v1 = model.add_var(f"vset[1,{k}]")
    v2 = model.add_var(f"vset[2,{k}]")
    v3 = model.add_var(f"vset[3,{k}]")
    v4 = model.add_var(f"vset[4,{k}]")
    qs = model.add_var(f"qset[{k}]", lb=0.0, ub=pv.s_max)

    def two_sided(expr: dict, center: float, z: str, m: float):
        lo = {n: -v for n, v in expr.items()}
        lo[z] = lo.get(z, 0.0) - m
        model.add_ineq(lo, -center)
        hi = dict(expr)
        hi[z] = hi.get(z, 0.0) - m
        model.add_ineq(hi, center)

    # Zone 1: u <= v1; Q = qset.
    model.add_ineq({u: 1.0, v1: -1.0, z1: -mv}, 0.0)
    two_sided({q: 1.0, qs: -1.0}, 0.0, z1, mq)
    # Zone 2 membership.
    model.add_ineq({u: -1.0, v1: 1.0, z2: -mv}, 0.0)
    model.add_ineq({u: 1.0, v2: -1.0, z2: -mv}, 0.0)
    # Zone 2 droop, linearized.
    u0 = bp.u0[pv.node]
    f2 = _f_coefficients("f2", bp.q0[k], u0, bp.vset0[k][0], bp.vset0[k][1])
    two_sided(
        {q: 1.0, qs: -f2["q"], u: -f2["u"], v1: -f2["v_lo"], v2: -f2["v_hi"]},
        f2["const"],
        z2,
        mq,
    )
    # Exact-range guard for zone 2: 0 <= Q <= qset regardless of the
    # linearization, which keeps a stale expansion point from being abused.
    model.add_ineq({q: -1.0, z2: -mq}, 0.0)
    model.add_ineq({q: 1.0, qs: -1.0, z2: -mq}, 0.0)
    # Zone 3: v2 <= u <= v3; Q = 0.
    model.add_ineq({u: -1.0, v2: 1.0, z3: -mv}, 0.0)
    model.add_ineq({u: 1.0, v3: -1.0, z3: -mv}, 0.0)
    two_sided({q: 1.0}, 0.0, z3, mq)
    # Zone 4 membership and linearized droop.
    model.add_ineq({u: -1.0, v3: 1.0, z4: -mv}, 0.0)
    model.add_ineq({u: 1.0, v4: -1.0, z4: -mv}, 0.0)
    f4 = _f_coefficients("f4", bp.q0[k], u0, bp.vset0[k][2], bp.vset0[k][3])
    two_sided(
        {q: 1.0, qs: -f4["q"], u: -f4["u"], v3: -f4["v_lo"], v4: -f4["v_hi"]},
        f4["const"],
        z4,
        mq,
    )
    # Exact-range guard for zone 4: -qset <= Q <= 0.
    model.add_ineq({q: 1.0, z4: -mq}, 0.0)
    model.add_ineq({q: -1.0, qs: -1.0, z4: -mq}, 0.0)
    # Zone 5: v4 <= u; Q = -qset.
    model.add_ineq({u: -1.0, v4: 1.0, z5: -mv}, 0.0)
    two_sided({q: 1.0, qs: 1.0}, 0.0, z5, mq)
    model.add_ineq({z1: 1.0, z2: 1.0, z3: 1.0, z4: 1.0, z5: 1.0}, 4.0)

    # Allowable setting ranges.
    r = SETTING_RANGES
    model.add_ineq({v1: -1.0}, -r["v1_min"])
    model.add_ineq({v1: 1.0, v2: -1.0}, -r["deadband_gap"])
    model.add_ineq({v2: -1.0}, -r["v2_min"])
    model.add_ineq({v2: 1.0}, r["v2_max"])
    model.add_ineq({v3: -1.0}, -r["v3_min"])
    model.add_ineq({v3: 1.0}, r["v3_max"])
    model.add_ineq({v3: 1.0, v4: -1.0}, -r["deadband_gap"])
    model.add_ineq({v4: 1.0}, r["v4_max"])

    add_capability(model, feeder, k)
    return {"z": [z1, z2, z3, z4, z5], "vset": [v1, v2, v3, v4], "qset": qs}


# ---------------------------------------------------------------------------
# solution checks and export


@dataclass
class ZoneRecord:
    pv_index: int
    active_zone: int
    u: float
    q: float
    q_expected: float
    consistent: bool


def active_zone(values: dict, k_position: int, model: ConicModel) -> int:
    """1-based index of the (unique) zero binary of a unit's zone group."""
    group = model.zone_groups[k_position]
    zeros = [n for n, name in enumerate(group, start=1) if values[name] < 0.5]
    if len(zeros) != 1:
        raise SolutionError(f"expected exactly one active zone, got {zeros}")
    return zeros[0]


def check_zone_consistency(
    feeder: Feeder,
    model: ConicModel,
    values: dict,
    settings: dict,
    tol: float = 1e-6,
) -> list:
    """Post-hoc check that each unit's Q equals its droop branch value.

    ``settings`` maps pv index to the VVCSettings in force (fixed defaults,
    or the solved settings in optimal mode).
    """
    records = []
    vvc_indices = [k for k, pv in enumerate(feeder.pv_units) if pv.has_vvc]
    for pos, k in enumerate(vvc_indices):
        pv = feeder.pv_units[k]
        u = values[vn_u(pv.node)]
        q = values[vn_pv("Q", k)]
        zone = active_zone(values, pos, model)
        expected = zone_branch_value(zone, u, settings[k])
        records.append(ZoneRecord(k, zone, u, q, expected, abs(q - expected) <= tol))
    return records


def zone_branch_value(zone: int, u: float, s: VVCSettings) -> float:
    """Droop branch value of a given zone evaluated at u."""
    if zone == 1:
        return s.q_max
    if zone == 2:
        return s.q_max * (s.v2 - u) / (s.v2 - s.v1)
    if zone == 3:
        return 0.0
    if zone == 4:
        return s.q_max * (u - s.v3) / (s.v3 - s.v4)
    if zone == 5:
        return -s.q_max
    raise VVCError(f"zone index {zone} out of range")


def settings_to_json(settings: dict, feeder: Feeder) -> str:
    """Per-unit deployment export: breakpoints as voltages, q_max in kvar."""
    doc = {}
    for k, s in sorted(settings.items()):
        doc[str(k)] = {
            "bus": feeder.pv_units[k].node.bus,
            "phase": feeder.pv_units[k].node.phase.value,
            "v1": math.sqrt(s.v1),
            "v2": math.sqrt(s.v2),
            "v3": math.sqrt(s.v3),
            "v4": math.sqrt(s.v4),
            "q_max_kvar": s.q_max * feeder.power_base_mva * 1000.0,
        }
    return json.dumps(doc, indent=2, sort_keys=True)


def settings_from_json(text: str, feeder: Feeder) -> dict:
    doc = json.loads(text)
    out = {}
    for key, entry in doc.items():
        v1 = entry["v1"] ** 2
        v4 = entry["v4"] ** 2
        out[int(key)] = VVCSettings(
            v1=v1,
            v2=entry["v2"] ** 2,
            v3=entry["v3"] ** 2,
            v4=v4,
            q_max=entry["q_max_kvar"] / (feeder.power_base_mva * 1000.0),
            # Co-optimized breakpoints may exceed the default continuous
            # window; widen it so legal settings always import.
            v_lo=min(DEFAULT_V_CONT[0], v1 - 1e-9),
            v_hi=max(DEFAULT_V_CONT[1], v4 + 1e-9),
        )
    return out
