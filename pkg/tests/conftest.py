from __future__ import annotations

import pytest

from sensorplane.fixtures import path as fixture_path
from sensorplane.metadata import MetadataStore
from sensorplane.privacy import load_permissions

SEED_TS = "1589470000.5"

_criteria: dict[int, dict] = {}


def seed_wgb(store: MetadataStore) -> MetadataStore:
    for kind, name in (("crate", "wgb_crates.ndjson"), ("sensor", "wgb_sensors.ndjson"),
                       ("org", "wgb_orgs.ndjson"), ("person", "wgb_people.ndjson")):
        store.load_ndjson(fixture_path(name), kind=kind, at=SEED_TS)
    load_permissions(store, fixture_path("wgb_permissions.ndjson"), SEED_TS)
    return store


@pytest.fixture
def wgb() -> MetadataStore:
    """The bundled WGB deployment: crates, sensors, people, org and permissions."""
    return seed_wgb(MetadataStore())


@pytest.fixture
def criterion(request):
    """Acceptance bookkeeping: ``criterion(n, title)`` returns a dict for measured values."""
    def register(n: int, title: str) -> dict:
        entry = {"n": n, "title": title, "nodeid": request.node.nodeid, "measured": {}}
        _criteria[n] = entry
        return entry["measured"]
    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    for entry in _criteria.values():
        if entry["nodeid"] != item.nodeid:
            continue
        if rep.when == "call" or (rep.when == "setup" and rep.failed):
            entry["passed"] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = {True: "PASS", False: "FAIL"}.get(e.get("passed"), "NOT RUN")
        measured = ", ".join(f"{k}={v}" for k, v in e["measured"].items())
        line = f"[{status}] {n:2d}. {e['title']}"
        terminalreporter.write_line(line + (f"  ({measured})" if measured else ""))


@pytest.fixture
def platform(tmp_path):
    """Inline platform over the bundled config with a data dir under tmp_path.

    The clock reads the bundled ELSYS message time, so its sensor timestamp
    passes the freshness check.
    """
    from goldens import elsys_message
    from sensorplane.api.platform import Platform
    from sensorplane.core import Timestamp

    msg = elsys_message()
    now = [Timestamp.parse(msg["ts"])]
    p = Platform.from_config(threaded=False, clock=lambda: now[0], data_dir=str(tmp_path / "acp-data"))
    p.clock_cell = now
    yield p
    p.close()
