"""Shared value types: timestamps, locations, boundaries and the message envelope.

Everything here is immutable once built, so instances can be handed between
actors without copying or locking.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

FEATURES: dict[str, str] = {
    "co2": "ppm",
    "temperature": "degC",
    "humidity": "percent",
    "light": "lux",
    "motion": "count",
    "power": "W",
    "weight": "kg",
    "occupancy": "count",
}


class PlatformError(Exception):
    """Base class for all platform errors."""


class MalformedTimestamp(PlatformError, ValueError):
    pass


class SystemMismatch(PlatformError, ValueError):
    pass


class UnknownBuilding(PlatformError, KeyError):
    pass


class UnsupportedPair(PlatformError, ValueError):
    pass


class InvalidLocation(PlatformError, ValueError):
    pass


# --------------------------------------------------------------------------
# Timestamps

_TS_RE = re.compile(r"^(\d+)(?:\.(\d{1,12}))?$")
MAX_FRACTION_DIGITS = 12


@dataclass(frozen=True)
class Timestamp:
    """Epoch timestamp kept as decimal text.

    Equality and hashing follow the textual form, so ``12.500`` and ``12.5``
    are different values; the ordering operators compare the exact numeric
    value, under which they tie.
    """

    seconds: int
    fraction: str = ""

    def __post_init__(self) -> None:
        if self.seconds < 0:
            raise MalformedTimestamp(f"negative timestamp: {self.seconds}")
        if len(self.fraction) > MAX_FRACTION_DIGITS or not (self.fraction == "" or self.fraction.isdigit()):
            raise MalformedTimestamp(f"bad fraction digits: {self.fraction!r}")

    @classmethod
    def parse(cls, text: str | int | float | Timestamp) -> Timestamp:
        if isinstance(text, Timestamp):
            return text
        if isinstance(text, bool):
            raise MalformedTimestamp(f"not a timestamp: {text!r}")
        if isinstance(text, int):
            return cls(text) if text >= 0 else cls._reject(text)
        if isinstance(text, float):
            if not math.isfinite(text) or text < 0:
                raise MalformedTimestamp(f"not a timestamp: {text!r}")
            return cls.from_ns(round(text * 1e6) * 1000, digits=6)
        m = _TS_RE.match(text.strip()) if isinstance(text, str) else None
        if m is None:
            raise MalformedTimestamp(f"not a timestamp: {text!r}")
        return cls(int(m.group(1)), m.group(2) or "")

    @staticmethod
    def _reject(value: Any) -> Timestamp:
        raise MalformedTimestamp(f"negative timestamp: {value!r}")

    @classmethod
    def from_ns(cls, ns: int, digits: int = 9) -> Timestamp:
        """Build from integer nanoseconds, keeping ``digits`` fraction digits (truncated)."""
        if ns < 0:
            raise MalformedTimestamp(f"negative timestamp: {ns}ns")
        secs, rem = divmod(ns, 1_000_000_000)
        if digits == 0:
            return cls(secs)
        frac = f"{rem:09d}"
        frac = (frac + "000")[:digits] if digits > 9 else frac[:digits]
        return cls(secs, frac)

    @classmethod
    def from_value(cls, value: Fraction | int, digits: int = 6) -> Timestamp:
        value = Fraction(value)
        if value < 0:
            raise MalformedTimestamp(f"negative timestamp: {value}")
        scaled = math.floor(value * 10**digits)
        secs, rem = divmod(scaled, 10**digits)
        return cls(int(secs), f"{rem:0{digits}d}" if digits else "")

    @classmethod
    def now(cls) -> Timestamp:
        return cls.from_ns(time.time_ns(), digits=6)

    @property
    def value(self) -> Fraction:
        if not self.fraction:
            return Fraction(self.seconds)
        return self.seconds + Fraction(int(self.fraction), 10 ** len(self.fraction))

    @property
    def ns(self) -> int:
        return math.floor(self.value * 1_000_000_000)

    def __float__(self) -> float:
        return float(self.value)

    def __str__(self) -> str:
        return f"{self.seconds}.{self.fraction}" if self.fraction else str(self.seconds)

    def __repr__(self) -> str:
        return f"Timestamp({str(self)!r})"

    def __lt__(self, other: Timestamp) -> bool:
        return self.value < other.value

    def __le__(self, other: Timestamp) -> bool:
        return self.value <= other.value

    def __gt__(self, other: Timestamp) -> bool:
        return self.value > other.value

    def __ge__(self, other: Timestamp) -> bool:
        return self.value >= other.value

    def datetime(self) -> datetime:
        return datetime.fromtimestamp(self.seconds, tz=timezone.utc)

    def shift(self, seconds: Fraction | int | float) -> Timestamp:
        digits = max(len(self.fraction), 6)
        return Timestamp.from_value(self.value + Fraction(seconds), digits=digits)


def parse_timestamp(text: str) -> Timestamp:
    return Timestamp.parse(text)


# --------------------------------------------------------------------------
# Locations

GPS = "GPS"
HIERARCHY = "HIERARCHY"


@dataclass(frozen=True)
class GpsLocation:
    acp_lat: float
    acp_lng: float
    acp_alt: float = 0.0
    parent_crate_id: str | None = None

    system = GPS

    def __post_init__(self) -> None:
        if not -90.0 <= self.acp_lat <= 90.0 or not -180.0 <= self.acp_lng <= 180.0:
            raise InvalidLocation(f"lat/lng out of range: {self.acp_lat}, {self.acp_lng}")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "system": GPS,
            "acp_lat": self.acp_lat,
            "acp_lng": self.acp_lng,
            "acp_alt": self.acp_alt,
        }
        if self.parent_crate_id is not None:
            out["parent_crate_id"] = self.parent_crate_id
        return out


@dataclass(frozen=True)
class BuildingLocation:
    """In-building coordinates: metres from the building origin plus floor."""

    building: str
    x: float
    y: float
    f: int = 0
    zf: float = 0.0
    parent_crate_id: str | None = None

    @property
    def system(self) -> str:
        return self.building

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"system": self.building, "x": self.x, "y": self.y, "f": self.f, "zf": self.zf}
        if self.parent_crate_id is not None:
            out["parent_crate_id"] = self.parent_crate_id
        return out


@dataclass(frozen=True)
class HierarchyLocation:
    parent_crate_id: str

    system = HIERARCHY

    def to_json(self) -> dict[str, Any]:
        return {"system": HIERARCHY, "parent_crate_id": self.parent_crate_id}


Location = GpsLocation | BuildingLocation | HierarchyLocation


def location_from_json(obj: Mapping[str, Any]) -> Location:
    """Parse an ``acp_location`` object; ``z`` is accepted as an alias of ``zf``."""
    if not isinstance(obj, Mapping):
        raise InvalidLocation(f"location must be an object, got {type(obj).__name__}")
    system = obj.get("system")
    parent = obj.get("parent_crate_id")
    try:
        if system == GPS:
            return GpsLocation(
                float(obj["acp_lat"]), float(obj["acp_lng"]), float(obj.get("acp_alt", 0.0)), parent
            )
        if system in (None, HIERARCHY):
            if parent is None:
                raise InvalidLocation("hierarchy location needs parent_crate_id")
            return HierarchyLocation(parent)
        zf = obj.get("zf", obj.get("z", 0.0))
        return BuildingLocation(str(system), float(obj["x"]), float(obj["y"]), int(obj.get("f", 0)), float(zf), parent)
    except KeyError as exc:
        raise InvalidLocation(f"location missing field {exc}") from None


@dataclass(frozen=True)
class CoordinateTransform:
    """Affine map between one building's frame and WGS84.

    Building x/y are rotated by ``rotation_deg`` (anticlockwise, x-axis towards
    east at 0), scaled, then offset from the anchor using a local
    metres-per-degree linearisation. Height is ``anchor_alt + f * floor_height + zf``.
    """

    building: str
    anchor_lat: float
    anchor_lng: float
    anchor_alt: float = 0.0
    rotation_deg: float = 0.0
    scale: float = 1.0
    floor_height: float = 3.5

    EARTH_RADIUS = 6_371_008.8

    @property
    def metres_per_deg_lat(self) -> float:
        return math.pi * self.EARTH_RADIUS / 180.0

    @property
    def metres_per_deg_lng(self) -> float:
        return self.metres_per_deg_lat * math.cos(math.radians(self.anchor_lat))

    def to_gps(self, loc: BuildingLocation) -> GpsLocation:
        th = math.radians(self.rotation_deg)
        east = self.scale * (loc.x * math.cos(th) - loc.y * math.sin(th))
        north = self.scale * (loc.x * math.sin(th) + loc.y * math.cos(th))
        return GpsLocation(
            self.anchor_lat + north / self.metres_per_deg_lat,
            self.anchor_lng + east / self.metres_per_deg_lng,
            self.anchor_alt + loc.f * self.floor_height + loc.zf,
            loc.parent_crate_id,
        )

    def to_building(self, loc: GpsLocation) -> BuildingLocation:
        north = (loc.acp_lat - self.anchor_lat) * self.metres_per_deg_lat
        east = (loc.acp_lng - self.anchor_lng) * self.metres_per_deg_lng
        th = math.radians(self.rotation_deg)
        x = (east * math.cos(th) + north * math.sin(th)) / self.scale
        y = (-east * math.sin(th) + north * math.cos(th)) / self.scale
        z = loc.acp_alt - self.anchor_alt
        f = math.floor(z / self.floor_height + 1e-9)
        return BuildingLocation(self.building, x, y, f, z - f * self.floor_height, loc.parent_crate_id)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> CoordinateTransform:
        return cls(
            building=obj["building"],
            anchor_lat=float(obj["anchor_lat"]),
            anchor_lng=float(obj["anchor_lng"]),
            anchor_alt=float(obj.get("anchor_alt", 0.0)),
            rotation_deg=float(obj.get("rotation_deg", 0.0)),
            scale=float(obj.get("scale", 1.0)),
            floor_height=float(obj.get("floor_height", 3.5)),
        )


def transform_location(
    loc: Location, target: str, registry: Mapping[str, CoordinateTransform] | Iterable[CoordinateTransform]
) -> Location:
    """Re-express ``loc`` in ``target`` (``"GPS"`` or a building name)."""
    if not isinstance(registry, Mapping):
        registry = {t.building: t for t in registry}
    if isinstance(loc, HierarchyLocation) or target == HIERARCHY:
        raise UnsupportedPair(f"no metric transform between {loc.system} and {target}")

    def lookup(name: str) -> CoordinateTransform:
        try:
            return registry[name]
        except KeyError:
            raise UnknownBuilding(name) from None

    if loc.system == target:
        return loc
    gps = loc if isinstance(loc, GpsLocation) else lookup(loc.building).to_gps(loc)
    if target == GPS:
        return gps
    return lookup(target).to_building(gps)


def metric_distance(
    a: Location, b: Location, registry: Mapping[str, CoordinateTransform] | None = None
) -> float | None:
    """Straight-line metres between two locations, or None if not comparable."""
    registry = registry or {}
    if isinstance(a, BuildingLocation) and isinstance(b, BuildingLocation) and a.building == b.building:
        fh = registry[a.building].floor_height if a.building in registry else 3.5
        dz = (a.f - b.f) * fh + (a.zf - b.zf)
        return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + dz**2)
    try:
        ga = transform_location(a, GPS, registry)
        gb = transform_location(b, GPS, registry)
    except (UnknownBuilding, UnsupportedPair):
        return None
    assert isinstance(ga, GpsLocation) and isinstance(gb, GpsLocation)
    mid = math.radians((ga.acp_lat + gb.acp_lat) / 2)
    k = math.pi * CoordinateTransform.EARTH_RADIUS / 180.0
    dn = (ga.acp_lat - gb.acp_lat) * k
    de = (ga.acp_lng - gb.acp_lng) * k * math.cos(mid)
    return math.sqrt(dn * dn + de * de + (ga.acp_alt - gb.acp_alt) ** 2)


# --------------------------------------------------------------------------
# Boundaries


@dataclass(frozen=True)
class Boundary:
    system: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 3:
            raise InvalidLocation("boundary needs at least 3 vertices")
        object.__setattr__(self, "points", pts)

    def to_json(self) -> list[list[float]]:
        return [[_num(x), _num(y)] for x, y in self.points]

    @classmethod
    def from_json(cls, obj: Any, system: str) -> Boundary:
        """Accept a vertex list, its JSON text, or ``{"system", "boundary"}``."""
        if isinstance(obj, str):
            obj = json.loads(obj)
        if isinstance(obj, Mapping):
            return cls(obj.get("system", system), tuple(tuple(p) for p in obj["boundary"]))
        return cls(system, tuple(tuple(p) for p in obj))

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return min(xs), min(ys), max(xs), max(ys)

    def centroid(self) -> tuple[float, float]:
        n = len(self.points)
        return sum(p[0] for p in self.points) / n, sum(p[1] for p in self.points) / n


def _num(v: float) -> int | float:
    return int(v) if float(v).is_integer() else v


def _on_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > 1e-12 * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    return min(ax, bx) - 1e-12 <= px <= max(ax, bx) + 1e-12 and min(ay, by) - 1e-12 <= py <= max(ay, by) + 1e-12


def point_in_boundary(p: Sequence[float], b: Boundary, system: str | None = None) -> bool:
    """Even-odd containment; points on an edge count as inside."""
    if system is not None and system != b.system:
        raise SystemMismatch(f"point in {system}, boundary in {b.system}")
    px, py = float(p[0]), float(p[1])
    pts = b.points
    inside = False
    j = len(pts) - 1
    for i in range(len(pts)):
        ax, ay = pts[i]
        bx, by = pts[j]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
        j = i
    return inside


# --------------------------------------------------------------------------
# Envelope


class FrozenDict(dict):
    """A dict that refuses mutation; still serialises as a JSON object."""

    def _immutable(self, *args: Any, **kwargs: Any) -> None:
        raise TypeError("FrozenDict is immutable")

    __setitem__ = __delitem__ = clear = pop = popitem = setdefault = update = _immutable  # type: ignore[assignment]

    def __hash__(self) -> int:  # type: ignore[override]
        return hash(json.dumps(self, sort_keys=True))

    def __reduce__(self) -> Any:
        return (FrozenDict, (dict(self),))


def freeze(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return FrozenDict((str(k), freeze(v)) for k, v in obj.items())
    if isinstance(obj, (list, tuple)):
        return tuple(freeze(v) for v in obj)
    return obj


def thaw(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: thaw(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [thaw(v) for v in obj]
    return obj


@dataclass(frozen=True)
class Envelope:
    """A normalised sensor message.

    ``payload_original`` is the message as received and is never modified;
    decoders only add ``payload_cooked`` features and the ``acp_*`` fields.
    """

    acp_id: str
    acp_ts: Timestamp
    acp_type: str
    payload_original: Mapping[str, Any] = field(default_factory=FrozenDict)
    payload_cooked: Mapping[str, float] = field(default_factory=FrozenDict)
    acp_event: str | None = None
    acp_event_value: str | None = None
    acp_confidence: float | None = None
    acp_location: Location | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "payload_original", freeze(self.payload_original))
        object.__setattr__(self, "payload_cooked", freeze(self.payload_cooked))
        if self.acp_confidence is not None and not 0.0 <= self.acp_confidence <= 1.0:
            raise ValueError(f"acp_confidence out of [0,1]: {self.acp_confidence}")
        unknown = set(self.payload_cooked) - set(FEATURES)
        if unknown:
            raise ValueError(f"payload_cooked has unregistered features: {sorted(unknown)}")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"acp_id": self.acp_id, "acp_ts": str(self.acp_ts), "acp_type": self.acp_type}
        if self.acp_event is not None:
            out["acp_event"] = self.acp_event
        if self.acp_event_value is not None:
            out["acp_event_value"] = self.acp_event_value
        if self.acp_confidence is not None:
            out["acp_confidence"] = self.acp_confidence
        if self.acp_location is not None:
            out["acp_location"] = self.acp_location.to_json()
        out["payload_original"] = thaw(self.payload_original)
        out["payload_cooked"] = thaw(self.payload_cooked)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Envelope:
        loc = obj.get("acp_location")
        return cls(
            acp_id=obj["acp_id"],
            acp_ts=Timestamp.parse(obj["acp_ts"]),
            acp_type=obj.get("acp_type", "unknown"),
            payload_original=obj.get("payload_original", {}),
            payload_cooked=obj.get("payload_cooked", {}),
            acp_event=obj.get("acp_event"),
            acp_event_value=obj.get("acp_event_value"),
            acp_confidence=obj.get("acp_confidence"),
            acp_location=location_from_json(loc) if loc is not None else None,
        )

    @classmethod
    def loads(cls, text: str | bytes) -> Envelope:
        return cls.from_json(json.loads(text))
