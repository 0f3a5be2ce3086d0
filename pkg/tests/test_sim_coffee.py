from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensorplane.sim.coffee import (
    COFFEE_GRINDING,
    NEW_POT,
    POT_EMPTY,
    POT_KG,
    POT_POURED,
    POT_REMOVED,
    Action,
    CoffeeInputs,
    CoffeeState,
    Phase,
    brew_day,
    coffee_step,
    match_events,
    render_script,
    run_coffee,
)


def names(events):
    return [e.event for e in events]


def test_grinder_crossing_fires_once():
    s = CoffeeState()
    s, ev = coffee_step(s, {"weight": 0.5, "grinder_w": 120}, 0)
    assert names(ev) == [COFFEE_GRINDING] and s.phase is Phase.GRINDING
    s, ev = coffee_step(s, {"weight": 0.5, "grinder_w": 130}, 5)
    assert ev == []


def test_cup_pour():
    s = CoffeeState(weight=2.5, ref_weight=2.5, empty_flag=False)
    s, ev = coffee_step(s, CoffeeInputs(2.25), 0)
    assert names(ev) == [POT_POURED] and s.phase is Phase.EMPTYING


def test_flat_inputs_quiet():
    s = CoffeeState.from_reading(CoffeeInputs(1.2))
    for t in range(100):
        s, ev = coffee_step(s, CoffeeInputs(1.2), t)
        assert ev == []


def test_remove_then_new_pot_after_brewing():
    s = CoffeeState()
    s, ev = coffee_step(s, CoffeeInputs(0.0, 0, 1000), 0)
    assert names(ev) == [POT_REMOVED]
    s, ev = coffee_step(s, CoffeeInputs(0.0, 0, 0), 300)
    assert ev == []
    s, ev = coffee_step(s, CoffeeInputs(2.0), 305)
    assert names(ev) == [NEW_POT] and s.phase is Phase.FRESH


def test_full_pot_without_brewing_is_not_new():
    s = CoffeeState()
    s, _ = coffee_step(s, CoffeeInputs(0.0), 0)
    s, ev = coffee_step(s, CoffeeInputs(2.0), 5)
    assert NEW_POT not in names(ev)


def test_empty_fires_once_until_refilled():
    s = CoffeeState(weight=0.9, ref_weight=0.9, empty_flag=False)
    s, ev = coffee_step(s, CoffeeInputs(0.55), 0)
    assert names(ev) == [POT_POURED, POT_EMPTY]
    s, ev = coffee_step(s, CoffeeInputs(0.52), 5)
    assert ev == []


def test_inputs_validated():
    with pytest.raises(ValueError):
        CoffeeInputs(-0.1)
    with pytest.raises(ValueError):
        CoffeeInputs(float("nan"))


def test_noiseless_brew_day_matches_script():
    for seed in range(10):
        r = render_script(brew_day(10.0, seed=seed), 10 * 3600)
        found = run_coffee(r.samples)
        assert [(e.t, e.event) for e in found] == [(e.t, e.event) for e in r.truth], seed


def test_noisy_brew_day_f1():
    r = render_script(brew_day(10.0, seed=1), 10 * 3600, noise_sigma=0.02, seed=1)
    score = match_events(run_coffee(r.samples), r.truth)
    assert score["f1"] >= 0.95


def test_match_events_scoring():
    r = render_script([Action(10, "grind"), Action(100, "pour")], 200)
    assert match_events(r.truth, r.truth)["f1"] == 1.0
    assert match_events([], r.truth)["f1"] == 0.0
    assert match_events([], [])["f1"] == 1.0


def test_unknown_action_rejected():
    with pytest.raises(ValueError):
        render_script([Action(0, "spill")], 10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(2.0, 12.0))
def test_dispensed_never_exceeds_brewed(seed, hours):
    r = render_script(brew_day(hours, seed=seed), hours * 3600)
    brewed = dispensed = 0.0
    level = None
    for e in run_coffee(r.samples):
        if e.event == NEW_POT:
            brewed += e.weight - POT_KG
            level = e.weight
        elif e.event == POT_POURED and level is not None:
            dispensed += level - e.weight
            level = e.weight
    assert dispensed <= brewed + 1e-9
