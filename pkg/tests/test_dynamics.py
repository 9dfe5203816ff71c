import math

import pytest

from vvcopf.dynamics import Event, TimeSeries, default_schedule, simulate, stability_verdict
from vvcopf.network import NodeRef, Phase, VoltageState
from vvcopf.vvc import VVCSettings, default_settings

N2 = NodeRef("2", Phase.A)


def test_event_validation():
    with pytest.raises(ValueError, match="unknown event kind"):
        Event(step=1, kind="meteor")
    with pytest.raises(ValueError, match="nonnegative"):
        Event(step=-1, kind="activate_vvc")


def test_default_schedule():
    sched = default_schedule(20, 50, 0.2, 7)
    assert [ev.kind for ev in sched] == ["activate_vvc", "perturb_loads"]
    assert sched[1].seed == 7


def _series(signal, qsig=None):
    steps = []
    for i, v in enumerate(signal):
        q = {0: qsig[i]} if qsig else {}
        steps.append((VoltageState({N2: v}, {N2: 0.0}), q))
    return TimeSeries(steps, [0] if qsig else [])


def test_verdict_stable_synthetic():
    assert stability_verdict(_series([1.0] * 30), 20, 1e-6) == "stable"


def test_verdict_oscillatory_synthetic():
    sig = [1.0 + (0.01 if i % 2 else -0.01) for i in range(30)]
    assert stability_verdict(_series(sig), 20, 1e-6) == "oscillatory"


def test_verdict_diverging_synthetic():
    sig = [1.0 + 0.001 * 1.3**i for i in range(30)]
    assert stability_verdict(_series(sig), 20, 1e-6) == "diverging"


def test_verdict_growing_oscillation_is_diverging():
    sig = [1.0 + (0.001 * 1.4**i) * (-1) ** i for i in range(30)]
    assert stability_verdict(_series(sig), 20, 1e-6) == "diverging"


def test_verdict_tail_bound():
    with pytest.raises(ValueError, match="tail"):
        stability_verdict(_series([1.0] * 10), 10, 1e-6)


def test_simulation_requires_settings(twobus):
    with pytest.raises(ValueError, match="missing settings"):
        simulate(twobus, {}, default_schedule(5, 10), 30)


def test_event_beyond_horizon(twobus):
    s = {0: default_settings(twobus.pv_units[0].s_max)}
    with pytest.raises(ValueError, match="horizon"):
        simulate(twobus, s, default_schedule(perturb_step=40), 30)


def test_controller_inactive_before_activation(twobus):
    s = {0: default_settings(twobus.pv_units[0].s_max)}
    series = simulate(twobus, s, default_schedule(10, 20, 0.2, 0), 30)
    assert all(q == 0.0 for q in series.reactive(0)[:10])
    assert any(q != 0.0 for q in series.reactive(0)[11:])


def test_twobus_default_curve_settles(twobus):
    """Delayed droop with the default curve has loop gain below one here,
    so the post-perturbation transient decays to a stable verdict."""
    s = {0: default_settings(twobus.pv_units[0].s_max)}
    series = simulate(twobus, s, default_schedule(20, 50, 0.2, 0), 140)
    assert stability_verdict(series, 20, 1e-6) == "stable"
    # Settled point: voltage above v4 would saturate; it sits in zone 4.
    assert series.voltages(N2)[-1] == pytest.approx(1.0571965768, abs=1e-6)
    assert series.reactive(0)[-1] == pytest.approx(-0.2785983249, abs=1e-6)


def test_twobus_steep_band_oscillates(twobus):
    """Narrow high band puts the loop gain above one: the delayed droop
    bounces between saturation and partial response without settling."""
    s = {0: VVCSettings(v1=0.8836, v2=0.9604, v3=1.10, v4=1.14, q_max=0.3)}
    series = simulate(twobus, s, default_schedule(20, 50, 0.2, 0), 140)
    assert stability_verdict(series, 20, 1e-6) == "oscillatory"
    tail = series.reactive(0)[-4:]
    assert tail[0] == pytest.approx(tail[2], abs=1e-9)
    assert abs(tail[0] - tail[1]) > 0.1


def test_seeded_runs_identical(twobus):
    s = {0: default_settings(twobus.pv_units[0].s_max)}
    a = simulate(twobus, s, default_schedule(20, 50, 0.2, 3), 80)
    b = simulate(twobus, s, default_schedule(20, 50, 0.2, 3), 80)
    assert a.to_csv(twobus) == b.to_csv(twobus)
    c = simulate(twobus, s, default_schedule(20, 50, 0.2, 4), 80)
    assert a.to_csv(twobus) != c.to_csv(twobus)


def test_perturbation_changes_loads_not_feeder(twobus):
    s = {0: default_settings(twobus.pv_units[0].s_max)}
    before = twobus.loads[0].p
    simulate(twobus, s, default_schedule(5, 10, 0.5, 0), 20)
    assert twobus.loads[0].p == before  # input feeder untouched


def test_csv_layout(twobus):
    s = {0: default_settings(twobus.pv_units[0].s_max)}
    series = simulate(twobus, s, default_schedule(5, 10, 0.2, 0), 20)
    lines = series.to_csv(twobus).splitlines()
    assert lines[0] == "step,v[1.a],v[2.a],q[0]"
    assert len(lines) == 21
    assert lines[1].startswith("0,")
