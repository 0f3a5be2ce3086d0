from __future__ import annotations

import random

import numpy as np
import pytest

from heatmap_oracle import ROOMS, SENSORS, inside, latest_values, random_sequence, reading, build_floor, violations
from sensorplane.api import Heatmap, UnknownFeature, heatmap, idw
from sensorplane.metadata import NotFound



def cells_of(grid, room):
    return {(c.x, c.y): c.value for c in grid.cells if c.crate_id == room}


def test_cells_cover_each_room_once():
    grid = Heatmap(build_floor().snapshot(), 0, "temperature").grid()
    pos = [(c.x, c.y) for c in grid.cells]
    assert len(pos) == len(set(pos)) == 11 * 10
    assert all(inside((c.x, c.y), ROOMS[c.crate_id]) for c in grid.cells)
    assert all(c.value is None for c in grid.cells)


def test_single_source_is_constant():
    hm = Heatmap(build_floor().snapshot(), 0, "temperature")
    hm.update(reading("s-f", 1000, 23.5))
    assert set(cells_of(hm.grid(), "R4").values()) == {23.5}


def test_single_source_exact_for_any_value():
    rng = random.Random(4)
    for _ in range(200):
        hm = Heatmap(build_floor().snapshot(), 0, "temperature")
        v = rng.uniform(-40, 60)
        hm.update(reading("s-c", 1000, v))
        assert set(cells_of(hm.grid(), "R2").values()) == {v}


def test_two_source_midpoint():
    hm = Heatmap(build_floor().snapshot(), 0, "temperature")
    hm.update(reading("s-a", 1000, 20.0))
    hm.update(reading("s-b", 1000, 24.0))
    assert cells_of(hm.grid(), "R1")[(5.5, 1.5)] == pytest.approx(22.0, abs=0.01)


def test_sensorless_room_stays_null():
    hm = Heatmap(build_floor().snapshot(), 0, "temperature")
    for sid in SENSORS:
        hm.update(reading(sid, 1000, 20.0))
    assert set(cells_of(hm.grid(), "R3").values()) == {None}


def test_update_touches_only_own_room():
    hm = Heatmap(build_floor().snapshot(), 0, "temperature")
    r2 = len(cells_of(hm.grid(), "R2"))
    assert hm.update(reading("s-c", 1000, 20.0)) == r2 and hm.touched == r2
    assert hm.update(reading("s-up", 1000, 20.0)) == 0
    assert hm.update(reading("s-c", 1001, 400.0, feature="co2")) == 0
    assert hm.update(reading("s-c", 999, 25.0)) == 0  # stale
    assert hm.touched == r2


def test_wall_invariant_by_perturbation():
    rng = random.Random(8)
    for _ in range(50):
        hm = Heatmap(build_floor().snapshot(), 0, "temperature")
        for env in random_sequence(rng, 20):
            hm.update(env)
        before = hm.grid()
        hm.update(reading("s-b", 5000, rng.uniform(-50, 50)))
        after = hm.grid()
        for room in ("R2", "R3", "R4"):
            assert cells_of(before, room) == cells_of(after, room)


def test_incremental_equals_full_and_oracle():
    rng = random.Random(1)
    snap = build_floor().snapshot()
    for _ in range(100):
        seq = random_sequence(rng, rng.randrange(1, 40))
        hm = Heatmap(snap, 0, "temperature")
        for env in seq:
            hm.update(env)
        inc = hm.grid()
        hm.recompute_all()
        assert hm.grid() == inc
        assert violations(inc, latest_values(seq)) == []


def test_heatmap_function_uses_latest():
    snap = build_floor().snapshot()
    latest = {"s-a": reading("s-a", 1000, 20.0), "s-b": reading("s-b", 1001, 24.0)}
    grid = heatmap(snap, 0, "temperature", latest)
    assert str(grid.as_of) == "1001" and grid.to_json()["cells"][0].keys() == {"x", "y", "crate_id", "value"}


def test_errors():
    snap = build_floor().snapshot()
    with pytest.raises(UnknownFeature):
        Heatmap(snap, 0, "radiation")
    with pytest.raises(NotFound):
        Heatmap(snap, 5, "temperature")
    with pytest.raises(ValueError):
        Heatmap(snap, 0, "temperature", cell_size=0)


def test_idw_exact_hit_and_weights():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    src = np.array([[0.0, 0.0], [2.0, 0.0]])
    out = idw(pts, src, np.array([10.0, 20.0]))
    assert out[0] == 10.0 and out[1] == pytest.approx(15.0)


def test_wgb_first_floor(wgb):
    grid = Heatmap(wgb.snapshot(), 1, "co2", cell_size=2.0).grid()
    assert {c.crate_id for c in grid.cells} == {"FE11", "FN05", "SE13"}
