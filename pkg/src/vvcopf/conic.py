"""Solver-agnostic conic model plus the SOCP / MISOCP backends.

The continuous backend maps a :class:`ConicModel` onto cvxopt's primal-dual
interior-point cone solver.  Mixed-integer models are handled by a small
best-bound branch-and-bound that exploits the one-active-zone structure of
the Volt-VAR binaries: when a unit is chosen for branching, its five zone
indicators are enumerated directly instead of a binary dichotomy.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers, spmatrix


class ModelError(ValueError):
    """Inconsistent model construction."""


#: Affine expression: (coeffs dict var-name -> float, constant).
Affine = tuple


@dataclass
class RotatedCone:
    """sum(f_i(x)^2) <= a(x) * b(x) with affine f_i, a, b and a, b >= 0."""

    key: str
    fs: list
    a: Affine
    b: Affine


class ConicModel:
    """Continuous/binary variables, linear rows, SOC cones, linear objective."""

    def __init__(self):
        self.var_names: list[str] = []
        self._index: dict[str, int] = {}
        self.lb: dict[str, float] = {}
        self.ub: dict[str, float] = {}
        self.binaries: set[str] = set()
        self.eqs: list[tuple[dict, float]] = []
        self.ineqs: list[tuple[dict, float]] = []  # coeffs . x <= rhs
        self.cones: list[RotatedCone] = []
        self._cone_keys: set[str] = set()
        self.objective: dict[str, float] = {}
        self.objective_const: float = 0.0
        # Groups of zone binaries (one list of 5 names per VVC unit).
        self.zone_groups: list[list[str]] = []

    # -- variables ---------------------------------------------------------
    def add_var(self, name: str, lb=None, ub=None, binary: bool = False) -> str:
        if name in self._index:
            raise ModelError(f"duplicate variable {name!r}")
        self._index[name] = len(self.var_names)
        self.var_names.append(name)
        if binary:
            self.binaries.add(name)
            lb, ub = 0.0, 1.0
        if lb is not None:
            self.lb[name] = float(lb)
        if ub is not None:
            self.ub[name] = float(ub)
        return name

    def has_var(self, name: str) -> bool:
        return name in self._index

    def _check(self, coeffs: dict):
        for name in coeffs:
            if name not in self._index:
                raise ModelError(f"unknown variable {name!r}")

    # -- rows and cones ----------------------------------------------------
    def add_eq(self, coeffs: dict, rhs: float):
        self._check(coeffs)
        self.eqs.append((dict(coeffs), float(rhs)))

    def add_ineq(self, coeffs: dict, rhs: float):
        self._check(coeffs)
        self.ineqs.append((dict(coeffs), float(rhs)))

    def add_rotated_cone(self, key: str, fs, a: Affine, b: Affine) -> bool:
        """Idempotent by key; returns False on a duplicate request."""
        if key in self._cone_keys:
            return False
        for coeffs, _ in list(fs) + [a, b]:
            self._check(coeffs)
        self.cones.append(RotatedCone(key, [(dict(c), float(k)) for c, k in fs],
                                      (dict(a[0]), float(a[1])), (dict(b[0]), float(b[1]))))
        self._cone_keys.add(key)
        return True

    def has_cone(self, key: str) -> bool:
        return key in self._cone_keys

    def set_objective(self, coeffs: dict, const: float = 0.0):
        self._check(coeffs)
        self.objective = dict(coeffs)
        self.objective_const = float(const)

    # -- export ------------------------------------------------------------
    def dump(self) -> str:
        """Plain-text description for cross-checking with external solvers."""
        out = []
        for name in self.var_names:
            kind = "BIN" if name in self.binaries else "CONT"
            out.append(
                f"VAR {name} {kind} lb={self.lb.get(name, '-inf')} ub={self.ub.get(name, '+inf')}"
            )

        def fmt(coeffs):
            return " + ".join(f"{v:.17g}*{k}" for k, v in sorted(coeffs.items()))

        for coeffs, rhs in self.eqs:
            out.append(f"EQ {fmt(coeffs)} == {rhs:.17g}")
        for coeffs, rhs in self.ineqs:
            out.append(f"LE {fmt(coeffs)} <= {rhs:.17g}")
        for cone in self.cones:
            fs = "; ".join(f"({fmt(c)} + {k:.17g})" for c, k in cone.fs)
            out.append(
                f"CONE {cone.key}: sum_sq[{fs}] <= "
                f"({fmt(cone.a[0])} + {cone.a[1]:.17g}) * ({fmt(cone.b[0])} + {cone.b[1]:.17g})"
            )
        out.append(f"MIN {fmt(self.objective)} + {self.objective_const:.17g}")
        return "\n".join(out) + "\n"


@dataclass
class SolverResult:
    status: str  # optimal | infeasible | unbounded | iteration-limit | numerical-failure
    values: dict = field(default_factory=dict)
    objective: float | None = None
    gap: float | None = None
    residual: float | None = None
    message: str = ""
    nodes_explored: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


_IPM_OPTIONS = {
    "show_progress": False,
    "maxiters": 200,
    "abstol": 1e-9,
    "reltol": 1e-9,
    "feastol": 1e-9,
    "refinement": 2,
}


def _to_conelp(model: ConicModel, fixings: dict):
    """Assemble conelp data (c, G, h, dims, A, b) with binaries relaxed."""
    n = len(model.var_names)
    index = model._index
    c = np.zeros(n)
    for name, coef in model.objective.items():
        c[index[name]] += coef

    a_rows, b_vals = [], []
    for coeffs, rhs in model.eqs:
        a_rows.append(coeffs)
        b_vals.append(rhs)
    for name, val in fixings.items():
        if name not in index:
            raise ModelError(f"fixing for unknown variable {name!r}")
        a_rows.append({name: 1.0})
        b_vals.append(float(val))

    g_rows, h_vals = [], []
    for coeffs, rhs in model.ineqs:
        g_rows.append(coeffs)
        h_vals.append(rhs)
    for name in model.var_names:
        if name in model.lb:
            g_rows.append({name: -1.0})
            h_vals.append(-model.lb[name])
        if name in model.ub:
            g_rows.append({name: 1.0})
            h_vals.append(model.ub[name])
    n_lin = len(g_rows)

    q_dims = []
    for cone in model.cones:
        # s0 = a + b, s1.. = (2*f_i, a - b); ||s1..|| <= s0 iff sum f^2 <= ab.
        a_c, a_k = cone.a
        b_c, b_k = cone.b

        def comb(scale_a, scale_b):
            coeffs = {}
            for k, v in a_c.items():
                coeffs[k] = coeffs.get(k, 0.0) + scale_a * v
            for k, v in b_c.items():
                coeffs[k] = coeffs.get(k, 0.0) + scale_b * v
            return coeffs, scale_a * a_k + scale_b * b_k

        rows = [comb(1.0, 1.0)]
        for f_c, f_k in cone.fs:
            rows.append(({k: 2.0 * v for k, v in f_c.items()}, 2.0 * f_k))
        rows.append(comb(1.0, -1.0))
        q_dims.append(len(rows))
        for coeffs, const in rows:
            # s = h - Gx must equal coeffs.x + const
            g_rows.append({k: -v for k, v in coeffs.items()})
            h_vals.append(const)

    def sparse(rows, ncols):
        vals, ri, ci = [], [], []
        for r, coeffs in enumerate(rows):
            for name, v in coeffs.items():
                vals.append(float(v))
                ri.append(r)
                ci.append(index[name])
        return spmatrix(vals, ri, ci, (len(rows), ncols))

    G = sparse(g_rows, n)
    h = matrix(np.array(h_vals))
    A = sparse(a_rows, n)
    b = matrix(np.array(b_vals)) if a_rows else matrix(np.zeros((0, 1)))
    dims = {"l": n_lin, "q": q_dims, "s": []}
    return matrix(c), G, h, dims, A, b


def solve_socp(model: ConicModel, fixings: dict | None = None) -> SolverResult:
    """Solve the continuous relaxation (binaries relaxed to [0,1] or fixed)."""
    fixings = dict(fixings or {})
    c, G, h, dims, A, b = _to_conelp(model, fixings)

    saved = dict(solvers.options)
    solvers.options.update(_IPM_OPTIONS)
    try:
        raw = solvers.conelp(c, G, h, dims, A, b)
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        return SolverResult(status="numerical-failure", message=str(exc))
    finally:
        solvers.options.clear()
        solvers.options.update(saved)

    status = raw["status"]
    if status == "primal infeasible":
        return SolverResult(status="infeasible", message="primal infeasible")
    if status == "dual infeasible":
        return SolverResult(status="unbounded", message="dual infeasible")
    if raw["x"] is None:
        return SolverResult(status="numerical-failure", message=f"solver status {status}")

    x = np.array(raw["x"]).ravel()
    values = {name: float(x[i]) for i, name in enumerate(model.var_names)}
    objective = float(np.dot(np.array(c).ravel(), x)) + model.objective_const
    gap = raw.get("gap")
    pres = raw.get("primal infeasibility")
    if status == "unknown":
        # Accept near-converged iterates; cvxopt reports unknown when the
        # last step stalls marginally short of the requested tolerances.
        if pres is not None and pres < 1e-6 and gap is not None and abs(gap) < 1e-6:
            status = "optimal"
        else:
            return SolverResult(
                status="numerical-failure",
                values=values,
                objective=objective,
                message=f"unknown status, primal residual {pres}",
            )
    return SolverResult(
        status="optimal",
        values=values,
        objective=objective,
        gap=float(gap) if gap is not None else None,
        residual=float(pres) if pres is not None else None,
    )


def _integral(result: SolverResult, binaries, tol=1e-6) -> bool:
    return all(min(result.values[z], 1.0 - result.values[z]) < tol for z in binaries)


def solve_misocp(
    model: ConicModel,
    gap: float = 1e-6,
    node_limit: int = 10000,
) -> SolverResult:
    """Best-bound branch-and-bound over the zone binaries.

    ``gap`` is an absolute objective tolerance for the optimality proof.
    Binaries that belong to a zone group are branched five ways (which zone
    is active); any stray binaries fall back to 0/1 dichotomy.
    """
    grouped = {z for group in model.zone_groups for z in group}
    stray = sorted(model.binaries - grouped)

    root = solve_socp(model)
    if root.status == "infeasible":
        return root
    if root.status != "optimal":
        return root

    explored = 1
    counter = 0
    incumbent: SolverResult | None = None

    if _integral(root, model.binaries):
        root.nodes_explored = explored
        root.gap = 0.0
        return root

    heap = [(root.objective, counter, {}, root)]
    best_bound = root.objective

    def branch_children(fixings: dict, result: SolverResult):
        # Pick the unfixed zone group with the most fractional indicators.
        best_group, best_frac = None, -1.0
        for group in model.zone_groups:
            if group[0] in fixings:
                continue
            frac = sum(min(result.values[z], 1.0 - result.values[z]) for z in group)
            if frac > best_frac:
                best_group, best_frac = group, frac
        if best_group is not None:
            for active in range(len(best_group)):
                child = dict(fixings)
                for i, z in enumerate(best_group):
                    child[z] = 0.0 if i == active else 1.0
                yield child
            return
        for z in stray:
            if z not in fixings:
                frac = min(result.values[z], 1.0 - result.values[z])
                if frac > 1e-6:
                    for val in (0.0, 1.0):
                        child = dict(fixings)
                        child[z] = val
                        yield child
                    return
        raise ModelError("fractional solution with nothing left to branch on")

    proved = False
    while heap:
        bound, _, fixings, result = heapq.heappop(heap)
        best_bound = bound
        if incumbent is not None and bound >= incumbent.objective - gap:
            proved = True
            break
        if explored >= node_limit:
            out = incumbent or SolverResult(status="iteration-limit", message="node limit hit")
            out.status = "iteration-limit"
            out.nodes_explored = explored
            out.gap = (incumbent.objective - best_bound) if incumbent else None
            return out
        for child_fix in branch_children(fixings, result):
            child = solve_socp(model, fixings=child_fix)
            explored += 1
            if child.status == "infeasible":
                continue
            if child.status != "optimal":
                continue
            if incumbent is not None and child.objective >= incumbent.objective - gap:
                continue
            if _integral(child, model.binaries):
                if incumbent is None or child.objective < incumbent.objective:
                    incumbent = child
            else:
                counter += 1
                heapq.heappush(heap, (child.objective, counter, child_fix, child))

    if incumbent is None:
        return SolverResult(status="infeasible", message="no integer-feasible point found")
    if not heap and not proved:
        best_bound = incumbent.objective  # tree exhausted: proof is exact
    incumbent.nodes_explored = explored
    incumbent.gap = max(0.0, incumbent.objective - best_bound)
    return incumbent
