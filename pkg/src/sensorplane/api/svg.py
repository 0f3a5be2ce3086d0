"""Floor plans as SVG, generated from crate boundaries."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Iterable

from ..metadata import CRATE, Crate, NotFound, Snapshot

DEFAULT_SCALE = 6.6  # px per metre
SVG_NS = "http://www.w3.org/2000/svg"
DIGITS = 6  # pixel coordinates are written to 1e-6; vertices with <= 5 decimals survive a round trip
_SKIP = ("building", "floor")


def _fmt(v: float) -> str:
    v = round(float(v), DIGITS)
    return str(int(v)) if v.is_integer() else repr(v)


def floor_crates(snap: Snapshot, floor: int) -> list[Crate]:
    """Crates drawn on ``floor``; NotFound unless a floor crate with that number exists."""
    crates = [Crate.from_record(r) for r in snap.live(CRATE)]
    if not any(c.crate_type == "floor" and c.floor == floor for c in crates):
        raise NotFound(f"floor {floor}")
    return sorted(
        (c for c in crates if c.floor == floor and c.crate_type not in _SKIP and c.acp_boundary is not None),
        key=lambda c: c.crate_id,
    )


def render_floor_svg(snap: Snapshot, floor: int, scale: float = DEFAULT_SCALE) -> str:
    crates = floor_crates(snap, floor)
    root = ET.Element("svg", {"xmlns": SVG_NS, "data-floor_number": str(floor)})
    if crates:
        x0, y0, x1, y1 = _extent(c.acp_boundary.points for c in crates)  # type: ignore[union-attr]
        root.set("viewBox", f"{_fmt(x0 * scale)} {_fmt(y0 * scale)} {_fmt((x1 - x0) * scale)} {_fmt((y1 - y0) * scale)}")
    for c in crates:
        assert c.acp_boundary is not None
        g = ET.SubElement(root, "g")
        poly = ET.SubElement(g, "polygon", {
            "id": c.crate_id,
            "data-crate_type": c.crate_type,
            "data-parent_crate": c.parent_crate_id or "",
            "data-floor_number": str(floor),
            "points": " ".join(f"{_fmt(x * scale)},{_fmt(y * scale)}" for x, y in c.acp_boundary.points),
        })
        title = ET.SubElement(poly, "title")
        title.text = c.crate_id
    return ET.tostring(root, encoding="unicode")


def _extent(polys: Iterable[Iterable[tuple[float, float]]]) -> tuple[float, float, float, float]:
    xs: list[float] = []
    ys: list[float] = []
    for pts in polys:
        for x, y in pts:
            xs.append(x)
            ys.append(y)
    return min(xs), min(ys), max(xs), max(ys)


def parse_floor_svg(text: str, scale: float = DEFAULT_SCALE) -> dict[str, dict[str, object]]:
    """Polygon attributes keyed by id, with ``points`` converted back to metres."""
    root = ET.fromstring(text)
    out: dict[str, dict[str, object]] = {}
    for poly in root.iter(f"{{{SVG_NS}}}polygon"):
        attrs: dict[str, object] = dict(poly.attrib)
        attrs["points"] = [
            (round(float(x) / scale, DIGITS), round(float(y) / scale, DIGITS)) for x, y in (p.split(",") for p in str(attrs["points"]).split())
        ]
        title = poly.find(f"{{{SVG_NS}}}title")
        attrs["title"] = title.text if title is not None else None
        out[str(attrs["id"])] = attrs
    return out
