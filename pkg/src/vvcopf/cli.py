"""Command-line entry point: solves, comparisons, simulations, reports."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .conic import ModelError
from .dynamics import default_schedule, simulate, stability_verdict
from .metrics import cost_saving, curtailment_percent, vvc_dispatch_kw
from .network import FeederError, load_feeder
from .powerflow import PowerFlowError, verify_opf_solution
from .socp import error_table, extract_solution
from .solver import InfeasibleError, SolveOptions, SolverFailure, two_stage_solve, solved_settings
from .vvc import default_settings, settings_from_json, settings_to_json

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INPUT_ERROR = 4

_MODE_MAP = {"no-vvc": "no_vvc", "vvc-default": "vvc_default", "vvc-optimal": "vvc_optimal"}


def _setup_logging():
    level = os.environ.get("VVCOPF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load(feeder_path: str):
    try:
        return load_feeder(feeder_path)
    except (OSError, FeederError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT_ERROR)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _errors_csv(feeder, sol) -> str:
    rows = ["from,to,soc_error,lin_error_c,lin_error_e"]
    for a, b, err, dc, de in error_table(feeder, sol):
        rows.append(f"{a},{b},{err!r},{dc!r},{de!r}")
    return "\n".join(rows) + "\n"


def _solution_json(sol) -> str:
    return json.dumps(
        {"objective": sol.objective, "values": sol.values}, indent=2, sort_keys=True
    )


def _run_solve(feeder, opts: SolveOptions):
    try:
        return two_stage_solve(feeder, opts)
    except InfeasibleError as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except (SolverFailure, PowerFlowError, ModelError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)


@click.group()
def main():
    """SOCP-based three-phase unbalanced ACOPF with smart-inverter Volt-VAR."""
    _setup_logging()


solve_options = [
    click.option("--mode", type=click.Choice(sorted(_MODE_MAP)), default="no-vvc"),
    click.option("--relax-upper", is_flag=True, help="Relax upper voltage limits."),
    click.option("--eps-stage1", type=float, default=1e-6, show_default=True),
    click.option("--eps-cone", type=float, default=1e-8, show_default=True),
    click.option("--eps-lin", type=float, default=1e-6, show_default=True),
    click.option("--max-outer", type=int, default=10, show_default=True),
    click.option("--max-stage1", type=int, default=30, show_default=True),
]


def _apply_options(func):
    for opt in reversed(solve_options):
        func = opt(func)
    return func


def _make_opts(mode, relax_upper, eps_stage1, eps_cone, eps_lin, max_outer, max_stage1):
    return SolveOptions(
        mode=_MODE_MAP[mode],
        relax_upper_voltage=relax_upper,
        eps_stage1=eps_stage1,
        eps_cone=eps_cone,
        eps_lin=eps_lin,
        max_outer=max_outer,
        max_stage1=max_stage1,
    )


@main.command()
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_apply_options
def solve(feeder_path, out_dir, mode, relax_upper, eps_stage1, eps_cone, eps_lin, max_outer, max_stage1):
    """Run one two-stage solve and write report, error table and solution."""
    feeder = _load(feeder_path)
    opts = _make_opts(mode, relax_upper, eps_stage1, eps_cone, eps_lin, max_outer, max_stage1)
    sol, report = _run_solve(feeder, opts)
    out = Path(out_dir)
    _write(out / "report.json", report.to_json())
    if sol is not None:
        _write(out / "errors.csv", _errors_csv(feeder, sol))
        _write(out / "solution.json", _solution_json(sol))
        verification = verify_opf_solution(feeder, sol)
        _write(out / "verification.json", verification.to_json())
        if opts.mode == "vvc_optimal":
            settings = solved_settings(feeder, sol, opts.mode)
            _write(out / "settings.json", settings_to_json(settings, feeder))
    if not report.converged:
        click.echo(f"non-convergence: {report.failure}", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)
    click.echo(f"objective: {report.objective:.6f} per hour; max SOC error {report.max_soc_error:.3e}")


@main.command()
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--relax-upper", is_flag=True)
def compare(feeder_path, out_dir, relax_upper):
    """Solve with default and co-optimized settings and compare them."""
    feeder = _load(feeder_path)
    results = {}
    for mode in ("vvc_default", "vvc_optimal"):
        opts = SolveOptions(mode=mode, relax_upper_voltage=relax_upper)
        sol, report = _run_solve(feeder, opts)
        if not report.converged:
            click.echo(f"non-convergence in {mode}: {report.failure}", err=True)
            sys.exit(EXIT_NO_CONVERGENCE)
        avail, disp = vvc_dispatch_kw(feeder, sol)
        results[mode] = {
            "objective_per_hour": report.objective,
            "vvc_available_kw": avail,
            "vvc_dispatched_kw": disp,
            "curtailment_percent": curtailment_percent(avail, min(disp, avail)) if avail > 0 else 0.0,
            "report": report.to_dict(),
        }
    saving = cost_saving(
        results["vvc_default"]["objective_per_hour"],
        results["vvc_optimal"]["objective_per_hour"],
    )
    doc = {
        "default": results["vvc_default"],
        "optimal": results["vvc_optimal"],
        "cost_saving_percent": saving,
    }
    _write(Path(out_dir) / "compare.json", json.dumps(doc, indent=2, sort_keys=True))
    click.echo(
        f"cost saving {saving:.3f}%; curtailment default "
        f"{results['vvc_default']['curtailment_percent']:.2f}% vs optimal "
        f"{results['vvc_optimal']['curtailment_percent']:.2f}%"
    )


@main.command()
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--settings", "settings_path", type=click.Path(exists=True), help="Settings JSON; defaults per unit otherwise.")
@click.option("--steps", type=int, default=90, show_default=True)
@click.option("--activate-step", type=int, default=20, show_default=True)
@click.option("--perturb-step", type=int, default=50, show_default=True)
@click.option("--rel-std", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tail", type=int, default=20, show_default=True)
@click.option("--eps", type=float, default=1e-6, show_default=True)
def simulate_cmd(feeder_path, out_dir, settings_path, steps, activate_step, perturb_step, rel_std, seed, tail, eps):
    """Quasi-static droop simulation with activation/perturbation events."""
    feeder = _load(feeder_path)
    if settings_path:
        try:
            settings = settings_from_json(Path(settings_path).read_text(), feeder)
        except (OSError, ValueError, KeyError) as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(EXIT_INPUT_ERROR)
    else:
        settings = {
            k: default_settings(pv.s_max)
            for k, pv in enumerate(feeder.pv_units)
            if pv.has_vvc
        }
    schedule = default_schedule(activate_step, perturb_step, rel_std, seed)
    try:
        series = simulate(feeder, settings, schedule, steps)
    except PowerFlowError as exc:
        click.echo(f"power flow failure: {exc}", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)
    verdict = stability_verdict(series, tail, eps)
    out = Path(out_dir)
    _write(out / "timeseries.csv", series.to_csv(feeder))
    _write(out / "dynamics.json", json.dumps({"verdict": verdict, "steps": steps}, indent=2, sort_keys=True))
    click.echo(f"verdict: {verdict}")


@main.command()
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--solution", "solution_path", required=True, type=click.Path(exists=True))
@click.option("--tol", type=float, default=1e-4, show_default=True)
def verify(feeder_path, solution_path, tol):
    """Check a saved solution against the exact nonlinear flow equations."""
    feeder = _load(feeder_path)
    try:
        doc = json.loads(Path(solution_path).read_text())
        sol = extract_solution(feeder, doc["values"], doc["objective"])
    except (OSError, ValueError, KeyError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT_ERROR)
    report = verify_opf_solution(feeder, sol, tol=tol)
    click.echo(report.to_json())
    sys.exit(EXIT_OK if report.passed else 1)


@main.command(name="dump-model")
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_apply_options
def dump_model(feeder_path, out_path, mode, relax_upper, eps_stage1, eps_cone, eps_lin, max_outer, max_stage1):
    """Write the assembled conic model in a plain-text exchange format."""
    from .solver import assemble_model, initial_base_point

    feeder = _load(feeder_path)
    opts = _make_opts(mode, relax_upper, eps_stage1, eps_cone, eps_lin, max_outer, max_stage1)
    bp, _ = initial_base_point(feeder, opts)
    model = assemble_model(feeder, bp, opts, cones=[])
    _write(Path(out_path), model.dump())
    click.echo(f"wrote {out_path}")


main.add_command(simulate_cmd, name="simulate")

if __name__ == "__main__":
    main()
