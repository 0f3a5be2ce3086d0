from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sensorplane.sim.smart import SmartPolicy, missed, smart_filter, step_day


def test_heartbeat_only_day():
    samples = [(float(t), 21.0) for t in range(86400)]
    out = list(smart_filter(samples, SmartPolicy(deadband=0.5, min_interval=3600)))
    assert len(out) == 24 and out[0].reason == "first"
    assert [e.t for e in out] == [h * 3600.0 for h in range(24)]


def test_single_step_day():
    day = step_day(steps=1, seed=3)
    out = list(smart_filter(day.samples, SmartPolicy(deadband=1.0, min_interval=3600)))
    assert missed(out, day.steps) == []
    assert sum(e.reason == "change" for e in out) == 1
    assert len(day.samples) / len(out) >= 500


def test_alert_emits_at_exact_sample():
    samples = [(float(t), 20.0 + (0.01 if t == 1234 else 0.0)) for t in range(5000)]
    alert = lambda t, v, prev: prev is not None and v != prev and v > 20.005  # noqa: E731
    out = list(smart_filter(samples, SmartPolicy(deadband=5, min_interval=3600, alert=alert)))
    assert [e.t for e in out if e.reason == "alert"] == [1234.0]


def test_out_of_order_rejected():
    with pytest.raises(ValueError):
        list(smart_filter([(2.0, 1.0), (1.0, 1.0)], SmartPolicy()))


def test_policy_validation():
    with pytest.raises(ValueError):
        SmartPolicy(deadband=-1)
    with pytest.raises(ValueError):
        SmartPolicy(min_interval=0)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=300), st.floats(0, 10), st.floats(1, 100))
def test_emissions_are_raw_samples(values, deadband, heartbeat):
    samples = [(float(i), v) for i, v in enumerate(values)]
    out = list(smart_filter(samples, SmartPolicy(deadband, heartbeat)))
    raw = set(samples)
    assert len(out) <= len(samples) and all((e.t, e.value) in raw for e in out)
