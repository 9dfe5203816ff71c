"""Quasi-static droop-response simulation and stability classification.

Each step applies the Q-V curve of every active controller to the previous
step's voltage (a one-step-delayed droop response) and re-solves the exact
power flow.  Scheduled events switch the controllers on and perturb loads
with a seeded multiplicative Gaussian factor, so runs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .network import Feeder, VoltageState
from .powerflow import solve_power_flow
from .vvc import VVCSettings, qv_reactive


@dataclass(frozen=True)
class Event:
    step: int
    kind: str  # "activate_vvc" | "perturb_loads"
    rel_std: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("activate_vvc", "perturb_loads"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.step < 0:
            raise ValueError("event step must be nonnegative")


def default_schedule(activate_step: int = 20, perturb_step: int = 50, rel_std: float = 0.2, seed: int = 0):
    return [
        Event(step=activate_step, kind="activate_vvc"),
        Event(step=perturb_step, kind="perturb_loads", rel_std=rel_std, seed=seed),
    ]


@dataclass
class TimeSeries:
    steps: list  # per step: (VoltageState, {pv index -> q})
    vvc_indices: list

    def __len__(self):
        return len(self.steps)

    def voltages(self, node):
        return [state.mag[node] for state, _ in self.steps]

    def reactive(self, k):
        return [q[k] for _, q in self.steps]

    def to_csv(self, feeder: Feeder) -> str:
        nodes = feeder.nodes
        header = ["step"]
        header += [f"v[{n}]" for n in nodes]
        header += [f"q[{k}]" for k in self.vvc_indices]
        rows = [",".join(header)]
        for t, (state, qvals) in enumerate(self.steps):
            row = [str(t)]
            row += [repr(state.mag[n]) for n in nodes]
            row += [repr(qvals[k]) for k in self.vvc_indices]
            rows.append(",".join(row))
        return "\n".join(rows) + "\n"


def simulate(feeder: Feeder, settings: dict, schedule, steps: int) -> TimeSeries:
    """Run the delayed-droop iteration for ``steps`` power-flow solves.

    ``settings`` maps pv index to VVCSettings for every unit with a
    controller.  Controllers start inactive (Q = 0, P = p_max) until an
    activation event; load perturbation rescales every load by an
    independent max(0, 1 + N(0, rel_std)) factor drawn from the event seed.
    """
    schedule = sorted(schedule, key=lambda ev: ev.step)
    if schedule and schedule[-1].step >= steps:
        raise ValueError("event beyond simulation horizon")
    vvc_indices = [k for k, pv in enumerate(feeder.pv_units) if pv.has_vvc]
    for k in vvc_indices:
        if k not in settings:
            raise ValueError(f"missing settings for pv unit {k}")

    active = False
    sim_feeder = feeder
    # Start from the pre-activation operating point.
    prev = solve_power_flow(sim_feeder)
    series = []
    for t in range(steps):
        for ev in schedule:
            if ev.step == t:
                if ev.kind == "activate_vvc":
                    active = True
                else:
                    rng = np.random.default_rng(ev.seed)
                    factors = np.maximum(0.0, 1.0 + rng.normal(0.0, ev.rel_std, len(feeder.loads)))
                    loads = tuple(
                        replace(
                            load,
                            p=load.p * f,
                            q=load.q * f,
                            p_kw=load.p_kw * f,
                            q_kvar=load.q_kvar * f,
                        )
                        for load, f in zip(feeder.loads, factors)
                    )
                    sim_feeder = replace(sim_feeder, loads=loads)
        injections = []
        qvals = {}
        for k, pv in enumerate(sim_feeder.pv_units):
            if pv.has_vvc and active:
                s = settings[k]
                u_prev = prev.mag[pv.node] ** 2
                q = qv_reactive(u_prev, s)
                # Reactive output is bounded by the rating at full active power.
                q_cap = math.sqrt(max(pv.s_max**2 - pv.p_max**2, 0.0))
                q = max(-q_cap, min(q_cap, q))
                injections.append((pv.p_max, q))
                qvals[k] = q
            else:
                injections.append((pv.p_max, 0.0))
                if pv.has_vvc:
                    qvals[k] = 0.0
        state = solve_power_flow(sim_feeder, injections, initial=prev)
        series.append((state, qvals))
        prev = state
    return TimeSeries(series, vvc_indices)


def stability_verdict(series: TimeSeries, tail: int, eps: float) -> str:
    """Classify the tail of a run as stable, oscillatory, or diverging.

    Stable: every voltage magnitude and controller output changes by less
    than eps between consecutive tail steps.  Oscillatory: changes exceed
    eps but alternate in sign without growing.  Diverging: otherwise.
    """
    if tail >= len(series):
        raise ValueError("tail must be shorter than the series")
    states = series.steps[-(tail + 1):]
    signals = []
    nodes = list(states[0][0].mag)
    for node in nodes:
        signals.append([state.mag[node] for state, _ in states])
    for k in series.vvc_indices:
        signals.append([q[k] for _, q in states])

    worst = None
    worst_amp = 0.0
    for sig in signals:
        diffs = [b - a for a, b in zip(sig, sig[1:])]
        amp = max(abs(d) for d in diffs)
        if amp > worst_amp:
            worst_amp = amp
            worst = diffs
    if worst_amp < eps:
        return "stable"
    # Bounded oscillation: significant steps alternate in sign and the
    # amplitude does not grow along the tail.
    big = [d for d in worst if abs(d) > eps]
    alternating = all(a * b < 0.0 for a, b in zip(big, big[1:]))
    half = len(worst) // 2
    first = max((abs(d) for d in worst[:half]), default=0.0)
    second = max((abs(d) for d in worst[half:]), default=0.0)
    if alternating and len(big) >= 2 and second <= 1.2 * first:
        return "oscillatory"
    return "diverging"
