from __future__ import annotations

import json
import random

import pytest

from sensorplane.core import Timestamp
from sensorplane.metadata import (
    CRATE,
    ORG,
    PERSON,
    SENSOR,
    CyclicParent,
    DanglingParent,
    MetadataStore,
    NoRecordAt,
    NotFound,
    TimestampRegression,
    UnknownCrate,
)
from sensorplane.fixtures import path as fixture_path

FE11_BODY = json.loads(open(fixture_path("wgb_crates.ndjson")).read().splitlines()[3])


def _crate(store, cid, parent, at):
    return store.upsert(CRATE, cid, {"crate_type": "room", "parent_crate_id": parent}, at)


def test_first_upsert_is_live():
    s = MetadataStore()
    rec = s.upsert(CRATE, "FE11", FE11_BODY, "1589469825.165538")
    assert rec.live and rec.acp_ts_end is None
    assert s.get(CRATE, "FE11").body["long-name"] == "Computer Science Department"


def test_second_upsert_expires_first():
    s = MetadataStore()
    s.upsert(CRATE, "FE11", FE11_BODY, "100")
    s.upsert(CRATE, "FE11", {**FE11_BODY, "description": "v2"}, "200")
    v1, v2 = s.snapshot().history(CRATE, "FE11")
    assert v1.acp_ts_end == Timestamp.parse("200") and v2.live


def test_get_at_time():
    s = MetadataStore()
    s.upsert(CRATE, "A", {"v": 1}, "100")
    s.upsert(CRATE, "A", {"v": 2}, "200")
    assert s.get(CRATE, "A", Timestamp.parse("150")).body["v"] == 1
    assert s.get(CRATE, "A", Timestamp.parse("200")).body["v"] == 2
    assert s.get(CRATE, "A", Timestamp.parse("99999")).body["v"] == 2
    with pytest.raises(NoRecordAt):
        s.get(CRATE, "A", Timestamp.parse("99.999"))
    with pytest.raises(NotFound):
        s.get(CRATE, "B")


def test_timestamp_regression_leaves_store_unchanged():
    s = MetadataStore()
    s.upsert(CRATE, "A", {"v": 1}, "100")
    for at in ("100", "50", "100.000"):
        with pytest.raises(TimestampRegression):
            s.upsert(CRATE, "A", {"v": 2}, at)
    assert len(s.snapshot().history(CRATE, "A")) == 1


def test_cycle_rejected(wgb):
    before = wgb.snapshot().version
    with pytest.raises(CyclicParent):
        wgb.upsert(CRATE, "WGB", {"crate_type": "building", "parent_crate_id": "FE11"}, "1589480000")
    with pytest.raises(CyclicParent):
        _crate(wgb, "FE11", "FE11", "1589480000")
    assert wgb.snapshot().version == before
    assert wgb.snapshot().ancestors("FE11") == ["FF", "WGB"]


def test_person_must_occupy_existing_crate(wgb):
    with pytest.raises(UnknownCrate):
        wgb.upsert(PERSON, "p-new", {"occupies": ["ZZ99"]}, "1589480000")


def test_crate_tree_depths(wgb):
    snap = wgb.snapshot()
    assert "children" not in snap.crate_tree("FE11", 0)
    tree = snap.crate_tree("WGB", 1)
    assert [c["crate_id"] for c in tree["children"]] == ["FF", "GF"]
    assert all("children" not in c for c in tree["children"])
    full = snap.crate_tree("WGB")
    ff = next(c for c in full["children"] if c["crate_id"] == "FF")
    assert [c["crate_id"] for c in ff["children"]] == ["FE11", "FN05", "SE13"]
    with pytest.raises(NotFound):
        snap.crate_tree("nowhere")


def test_ancestors_and_descendants(wgb):
    snap = wgb.snapshot()
    assert snap.ancestors("FE11") == ["FF", "WGB"]
    assert snap.ancestors("WGB") == []
    assert snap.ancestors("elsys-co2-041ba9") == ["FE11", "FF", "WGB"]
    assert snap.is_descendant("SE13", "WGB")
    assert not snap.is_descendant("WGB", "SE13")
    assert snap.is_descendant("SE13", "SE13")
    with pytest.raises(NotFound):
        snap.is_descendant("SE13", "nowhere")
    with pytest.raises(NotFound):
        snap.ancestors("nowhere")


def test_dangling_parent_reports_partial_chain():
    s = MetadataStore()
    _crate(s, "B", None, "1")
    _crate(s, "A", "B", "2")
    s.upsert(CRATE, "B", {"crate_type": "room", "parent_crate_id": "GONE"}, "3")
    with pytest.raises(DanglingParent) as exc:
        s.snapshot().ancestors("A")
    assert exc.value.partial == ["B"] and exc.value.missing == "GONE"


def test_sensors_in_crate(wgb):
    snap = wgb.snapshot()
    assert [s.acp_id for s in snap.sensors_in_crate("FE11")] == ["elsys-co2-041ba9", "elsys-co2-04fe12"]
    ff = [s.acp_id for s in snap.sensors_in_crate("FF", recursive=True)]
    assert "elsys-co2-041ba9" in ff and "elsys-co2-04a1c1" not in ff
    assert snap.sensors_in_crate("FF") == []
    with pytest.raises(NotFound):
        snap.sensors_in_crate("nowhere")


def test_sensor_view(wgb):
    s = wgb.snapshot().sensor("elsys-co2-041ba9")
    assert s.features == ("co2", "humidity", "light", "motion", "temperature", "vdd")
    assert s.parent_crate_id == "FE11" and s.acp_type == "co2"


def test_delete_is_tombstone(wgb):
    wgb.delete(SENSOR, "elsys-co2-04fe12", "1589480000")
    snap = wgb.snapshot()
    assert not snap.has(SENSOR, "elsys-co2-04fe12")
    assert snap.has(SENSOR, "elsys-co2-04fe12", include_deleted=True)
    assert [s.acp_id for s in snap.sensors_in_crate("FE11")] == ["elsys-co2-041ba9"]
    assert snap.get(SENSOR, "elsys-co2-04fe12", Timestamp.parse("1589470000.5")).body["type"] == "co2"


def test_snapshot_isolation(wgb):
    snap = wgb.snapshot()
    wgb.upsert(CRATE, "FE11", {**FE11_BODY, "description": "changed"}, "1589480000")
    assert snap.crate("FE11").description == "Crate Description"
    assert wgb.snapshot().crate("FE11").description == "changed"


def test_orgs_have_their_own_hierarchy():
    s = MetadataStore()
    s.upsert(ORG, "uni", {"name": "University"}, "1")
    s.upsert(ORG, "cst", {"parent_org_id": "uni"}, "2")
    assert s.snapshot().ancestors("cst", kind=ORG) == ["uni"]
    with pytest.raises(CyclicParent):
        s.upsert(ORG, "uni", {"parent_org_id": "cst"}, "3")


def test_journal_replay_round_trip(tmp_path):
    journal = tmp_path / "meta.ndjson"
    s = MetadataStore(journal)
    _crate(s, "B", None, "1")
    _crate(s, "A", "B", "2")
    s.upsert(CRATE, "A", {"crate_type": "room", "parent_crate_id": None}, "3")
    s.delete(CRATE, "B", "4")
    r = MetadataStore.replay(journal)
    assert list(r.all_records()) == list(s.all_records())
    dumped = tmp_path / "dump.ndjson"
    s.dump(dumped)
    lines = [json.loads(x) for x in dumped.read_text().splitlines()]
    assert {"kind", "id", "acp_ts", "body"} <= set(lines[0])
    assert (lines[0]["id"], lines[0]["acp_ts_end"]) == ("B", "4")


def test_load_ndjson_bodies(tmp_path):
    s = MetadataStore()
    n = s.load_ndjson(fixture_path("wgb_crates.ndjson"), kind=CRATE)
    assert n == 8
    assert str(s.get(CRATE, "FE11").acp_ts) == "1589469825.165538"
    assert "crate_id" in s.get(CRATE, "FE11").body


# -- oracles over random forests -------------------------------------------------------


def _random_forest(rng: random.Random, n: int) -> tuple[MetadataStore, dict[str, str | None]]:
    s = MetadataStore()
    parents: dict[str, str | None] = {}
    for i in range(n):
        cid = f"c{i:03d}"
        parent = rng.choice([None, *parents]) if parents and rng.random() < 0.85 else None
        parents[cid] = parent
        _crate(s, cid, parent, str(i + 1))
    return s, parents


def _closure(parents: dict[str, str | None], cid: str) -> list[str]:
    out = []
    cur = parents[cid]
    while cur is not None:
        out.append(cur)
        cur = parents[cur]
    return out


def test_ancestors_and_tree_match_closure_oracle():
    rng = random.Random(200)
    s, parents = _random_forest(rng, 200)
    snap = s.snapshot()
    for cid in parents:
        assert snap.ancestors(cid) == _closure(parents, cid)
    for cid in rng.sample(sorted(parents), 20):
        other = rng.choice(sorted(parents))
        assert snap.is_descendant(cid, other) == (other == cid or other in _closure(parents, cid))

    def flatten(node):
        yield node["crate_id"]
        for c in node.get("children", []):
            yield from flatten(c)

    for root in (c for c, p in parents.items() if p is None):
        below = sorted(c for c in parents if root in _closure(parents, c))
        assert sorted(list(flatten(snap.crate_tree(root)))[1:]) == below


def test_sensors_in_crate_matches_ancestor_filter_oracle():
    rng = random.Random(500)
    s, parents = _random_forest(rng, 60)
    home = {}
    for i in range(500):
        sid = f"s{i:03d}"
        home[sid] = rng.choice(sorted(parents))
        s.upsert(SENSOR, sid, {"acp_location": {"system": "HIERARCHY", "parent_crate_id": home[sid]}}, "1000")
    snap = s.snapshot()
    for cid in parents:
        want = sorted(sid for sid, h in home.items() if h == cid or cid in _closure(parents, h))
        assert [m.acp_id for m in snap.sensors_in_crate(cid, recursive=True)] == want
