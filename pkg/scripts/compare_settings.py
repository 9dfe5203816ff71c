#!/usr/bin/env python3
"""Compare default against co-optimized inverter settings on one feeder.

Prints objectives, cost saving, curtailment, and the solved Q-V curves.

Usage: python3 scripts/compare_settings.py --feeder src/vvcopf/feeders/feeder30.json
"""

import argparse
import math

from vvcopf import SolveOptions, load_feeder, two_stage_solve
from vvcopf.metrics import cost_saving, curtailment_percent, vvc_dispatch_kw
from vvcopf.solver import solved_settings


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--feeder", required=True, help="feeder JSON file")
    args = ap.parse_args()
    feeder = load_feeder(args.feeder)

    rows = {}
    for mode in ("vvc_default", "vvc_optimal"):
        sol, rep = two_stage_solve(feeder, SolveOptions(mode=mode))
        if not rep.converged:
            raise SystemExit(f"{mode} did not converge: {rep.failure}")
        avail, disp = vvc_dispatch_kw(feeder, sol)
        rows[mode] = (rep, sol, curtailment_percent(avail, disp))

    rep_d, _, curt_d = rows["vvc_default"]
    rep_o, sol_o, curt_o = rows["vvc_optimal"]
    print(f"default objective   {rep_d.objective:>12.6f} /h   curtailment {curt_d:6.3f}%")
    print(f"optimal objective   {rep_o.objective:>12.6f} /h   curtailment {curt_o:6.3f}%")
    print(f"cost saving         {cost_saving(rep_d.objective, rep_o.objective):>12.3f} %")
    print()
    print("solved curves (voltage breakpoints in p.u., q_max in p.u.):")
    for k, s in sorted(solved_settings(feeder, sol_o, "vvc_optimal").items()):
        bp = " ".join(f"{math.sqrt(v):.4f}" for v in s.breakpoints())
        print(f"  unit {k}: breakpoints {bp}  q_max {s.q_max:.4f}")


if __name__ == "__main__":
    main()
