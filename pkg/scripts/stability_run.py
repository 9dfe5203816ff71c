#!/usr/bin/env python3
"""Quasi-static droop-response run: activate controllers, perturb loads,
classify the tail as stable / oscillatory / diverging.

Settings come either from a JSON export (--settings) or from a fresh
co-optimized solve (--optimize); otherwise the defaults per unit are used.

Usage: python3 scripts/stability_run.py --feeder src/vvcopf/feeders/feeder30.json --optimize
"""

import argparse
from pathlib import Path

from vvcopf import SolveOptions, load_feeder, two_stage_solve
from vvcopf.dynamics import default_schedule, simulate, stability_verdict
from vvcopf.solver import solved_settings
from vvcopf.vvc import default_settings, settings_from_json


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--feeder", required=True)
    ap.add_argument("--settings", help="settings JSON exported by the solver")
    ap.add_argument("--optimize", action="store_true", help="co-optimize settings first")
    ap.add_argument("--steps", type=int, default=140)
    ap.add_argument("--tail", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="write the voltage/Q time series here")
    args = ap.parse_args()
    feeder = load_feeder(args.feeder)

    if args.settings:
        settings = settings_from_json(Path(args.settings).read_text(), feeder)
        label = f"settings from {args.settings}"
    elif args.optimize:
        sol, rep = two_stage_solve(feeder, SolveOptions(mode="vvc_optimal"))
        if not rep.converged:
            raise SystemExit(f"setting optimization did not converge: {rep.failure}")
        settings = solved_settings(feeder, sol, "vvc_optimal")
        label = "co-optimized settings"
    else:
        settings = {
            k: default_settings(pv.s_max)
            for k, pv in enumerate(feeder.pv_units)
            if pv.has_vvc
        }
        label = "default settings"

    series = simulate(feeder, settings, default_schedule(20, 50, 0.2, args.seed), args.steps)
    verdict = stability_verdict(series, args.tail, 1e-6)
    print(f"{label}: verdict {verdict} over {args.steps} steps (tail {args.tail})")
    for k in series.vvc_indices:
        q = series.reactive(k)
        print(f"  unit {k}: final q {q[-1]:+.6f}, last 4 steps {[round(v, 6) for v in q[-4:]]}")
    if args.csv:
        Path(args.csv).write_text(series.to_csv(feeder))
        print(f"time series written to {args.csv}")


if __name__ == "__main__":
    main()
