"""Expected field layouts of the /bim, /sensors, /readings and /space responses."""

from __future__ import annotations

import json

from sensorplane.fixtures import path as fixture_path

BIM_KEYS = ["crate_id", "crate_type", "acp_ts", "long-name", "description", "acp_boundary", "parent_crate_id",
            "acp_location"]
BIM_LOCATION_KEYS = ["f", "x", "y", "z", "system"]
SENSOR_KEYS = ["acp_id", "acp_ts", "type", "owner", "source", "features", "acp_location"]
SENSOR_LOCATION_KEYS = ["system", "acp_alt", "acp_lat", "acp_lng", "parent_crate_id"]
READING_KEYS = ["acp_id", "acp_ts", "features"]
READING_FEATURE_KEYS = ["co2", "device", "humidity", "light", "motion", "temperature", "vdd"]
POLYGON_ATTRS = {"id", "data-crate_type", "data-parent_crate", "data-floor_number", "points"}

ELSYS = "elsys-co2-041ba9"


def elsys_message() -> dict:
    with open(fixture_path("elsys_message.json"), encoding="utf-8") as fh:
        return json.load(fh)


# every data endpoint, used for replay comparisons
DATA_URLS = [
    "/bim/get/FE11",
    "/bim/get/WGB/3",
    "/sensors/get/" + ELSYS,
    "/sensors/bim/get/FE11",
    "/readings/get/" + ELSYS,
    "/readings/get/" + ELSYS + "?from=1589400000&to=1589500000",
    "/readings/get/" + ELSYS + "?from=1589400000&to=1589500000&format=envelope",
    "/space/get_bim_floor_number/1",
    "/space/get_bim_floor_number/0",
]
