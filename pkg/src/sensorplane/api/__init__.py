"""Query API, floor SVG and heatmap exporters, platform wiring and CLI."""

from __future__ import annotations

from .handlers import Api, ApiRequest, ApiResponse, BadRequest, reading_json
from .heatmap import Cell, Heatmap, HeatmapGrid, UnknownFeature, heatmap, idw
from .svg import DEFAULT_SCALE, parse_floor_svg, render_floor_svg

__all__ = [
    "Api", "ApiRequest", "ApiResponse", "BadRequest", "reading_json",
    "Cell", "Heatmap", "HeatmapGrid", "UnknownFeature", "heatmap", "idw",
    "DEFAULT_SCALE", "parse_floor_svg", "render_floor_svg",
]
