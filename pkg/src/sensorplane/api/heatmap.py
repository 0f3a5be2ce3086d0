"""Room-constrained heatmaps: each room interpolates only its own sensors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from ..core import (
    FEATURES,
    BuildingLocation,
    CoordinateTransform,
    Envelope,
    GpsLocation,
    PlatformError,
    Timestamp,
    point_in_boundary,
)
from ..metadata import Crate, Snapshot
from .svg import floor_crates


class UnknownFeature(PlatformError, KeyError):
    pass


@dataclass(frozen=True)
class Cell:
    x: float
    y: float
    crate_id: str
    value: float | None


@dataclass(frozen=True)
class HeatmapGrid:
    floor: int
    cell_size: float
    feature: str
    as_of: Timestamp | None
    cells: tuple[Cell, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "floor": self.floor,
            "cell_size": self.cell_size,
            "feature": self.feature,
            "as_of": None if self.as_of is None else str(self.as_of),
            "cells": [{"x": c.x, "y": c.y, "crate_id": c.crate_id, "value": c.value} for c in self.cells],
        }


def idw(points: np.ndarray, sources: np.ndarray, values: np.ndarray, power: float = 2.0) -> np.ndarray:
    """Inverse-distance weighting of ``values`` at ``sources`` onto ``points`` (N×2, M×2, M)."""
    d = np.hypot(points[:, None, 0] - sources[None, :, 0], points[:, None, 1] - sources[None, :, 1])
    hit = d < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(hit, 0.0, 1.0 / d**power)
        # normalise before weighting so a lone source reproduces its value exactly
        out = (w / w.sum(axis=1, keepdims=True)) @ values
    exact = hit.any(axis=1)
    if exact.any():
        out[exact] = (hit[exact] @ values) / hit[exact].sum(axis=1)
    return out


def sensor_position(
    loc: Any, room: Crate, transforms: Mapping[str, CoordinateTransform]
) -> tuple[float, float]:
    """Building x/y for a sensor: its own building location, GPS mapped through the
    room's building transform, or failing both the room centroid."""
    building = room.acp_boundary.system if room.acp_boundary is not None else None
    if isinstance(loc, BuildingLocation) and loc.building == building:
        return loc.x, loc.y
    if isinstance(loc, GpsLocation) and building in transforms:
        b = transforms[building].to_building(loc)  # type: ignore[index]
        return b.x, b.y
    assert room.acp_boundary is not None
    return room.acp_boundary.centroid()


class Heatmap:
    """Grid for one floor and feature, updated one envelope at a time.

    ``touched`` counts cell recomputations, so tests can check that an update
    only recomputes the cells of the sensor's own room.
    """

    def __init__(
        self,
        snap: Snapshot,
        floor: int,
        feature: str,
        cell_size: float = 1.0,
        transforms: Mapping[str, CoordinateTransform] | None = None,
        power: float = 2.0,
    ):
        if feature not in FEATURES:
            raise UnknownFeature(feature)
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.floor = floor
        self.feature = feature
        self.cell_size = cell_size
        self.power = power
        self.rooms = floor_crates(snap, floor)
        transforms = transforms or {}
        self.touched = 0
        self.as_of: Timestamp | None = None

        self._room_cells: dict[str, np.ndarray] = {}
        self._values: dict[str, np.ndarray] = {}
        self._room_of_sensor: dict[str, str] = {}
        self._pos: dict[str, tuple[float, float]] = {}
        self._latest: dict[str, tuple[Timestamp, float]] = {}

        claimed: set[tuple[int, int]] = set()
        for room in self.rooms:
            assert room.acp_boundary is not None
            x0, y0, x1, y1 = room.acp_boundary.bbox()
            pts: list[tuple[float, float]] = []
            for i in range(math.floor(x0 / cell_size), math.ceil(x1 / cell_size)):
                for j in range(math.floor(y0 / cell_size), math.ceil(y1 / cell_size)):
                    if (i, j) in claimed:
                        continue
                    p = ((i + 0.5) * cell_size, (j + 0.5) * cell_size)
                    if point_in_boundary(p, room.acp_boundary):
                        claimed.add((i, j))
                        pts.append(p)
            self._room_cells[room.crate_id] = np.asarray(pts, dtype=float).reshape(-1, 2)
            self._values[room.crate_id] = np.full(len(pts), np.nan)
            for s in snap.sensors_in_crate(room.crate_id):
                self._room_of_sensor[s.acp_id] = room.crate_id
                self._pos[s.acp_id] = sensor_position(s.acp_location, room, transforms)

    def room_of(self, acp_id: str) -> str | None:
        return self._room_of_sensor.get(acp_id)

    def update(self, env: Envelope) -> int:
        """Apply one envelope; returns the number of cells recomputed (0 if irrelevant)."""
        room = self._room_of_sensor.get(env.acp_id)
        if room is None or self.feature not in env.payload_cooked:
            return 0
        cur = self._latest.get(env.acp_id)
        if cur is not None and env.acp_ts < cur[0]:
            return 0
        self._latest[env.acp_id] = (env.acp_ts, float(env.payload_cooked[self.feature]))
        if self.as_of is None or env.acp_ts > self.as_of:
            self.as_of = env.acp_ts
        return self._recompute(room)

    def _recompute(self, room: str) -> int:
        cells = self._room_cells[room]
        ids = sorted(s for s, r in self._room_of_sensor.items() if r == room and s in self._latest)
        if not ids:
            self._values[room] = np.full(len(cells), np.nan)
        else:
            src = np.asarray([self._pos[s] for s in ids], dtype=float)
            vals = np.asarray([self._latest[s][1] for s in ids], dtype=float)
            self._values[room] = idw(cells, src, vals, self.power) if len(cells) else np.empty(0)
        self.touched += len(cells)
        return len(cells)

    def recompute_all(self) -> int:
        return sum(self._recompute(r.crate_id) for r in self.rooms)

    def grid(self) -> HeatmapGrid:
        out: list[Cell] = []
        for room in self.rooms:
            for (x, y), v in zip(self._room_cells[room.crate_id], self._values[room.crate_id]):
                out.append(Cell(float(x), float(y), room.crate_id, None if math.isnan(v) else float(v)))
        return HeatmapGrid(self.floor, self.cell_size, self.feature, self.as_of, tuple(out))


def heatmap(
    snap: Snapshot,
    floor: int,
    feature: str,
    latest: Mapping[str, Envelope],
    cell_size: float = 1.0,
    transforms: Mapping[str, CoordinateTransform] | None = None,
) -> HeatmapGrid:
    hm = Heatmap(snap, floor, feature, cell_size, transforms)
    for env in sorted(latest.values(), key=lambda e: (e.acp_ts.value, e.acp_id)):
        hm.update(env)
    return hm.grid()
