"""Versioned metadata store for crates, sensors, people, orgs and permissions.

Every object is a (kind, id) key with a history of JSON bodies. Writing a new
version expires the previous one at the same timestamp, so each history is a
gap-free chain with exactly one live record. Writers go through
:class:`MetadataStore`; readers take a :class:`Snapshot`, which never changes.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator, Mapping

from .core import (
    Boundary,
    BuildingLocation,
    Location,
    PlatformError,
    Timestamp,
    freeze,
    location_from_json,
    thaw,
)

CRATE = "crate"
SENSOR = "sensor"
PERSON = "person"
ORG = "org"
PERMISSION = "permission"
KINDS = (CRATE, SENSOR, PERSON, ORG, PERMISSION)

# kinds whose bodies carry a parent pointer that must stay acyclic
_PARENT_FIELD = {CRATE: "parent_crate_id", ORG: "parent_org_id"}


class NotFound(PlatformError, KeyError):
    pass


class NoRecordAt(PlatformError, KeyError):
    pass


class TimestampRegression(PlatformError, ValueError):
    pass


class CyclicParent(PlatformError, ValueError):
    pass


class UnknownCrate(PlatformError, ValueError):
    pass


class DanglingParent(PlatformError, LookupError):
    """Raised when a parent chain points at a missing crate; ``partial`` holds the chain so far."""

    def __init__(self, missing: str, partial: list[str]):
        super().__init__(f"parent {missing!r} does not exist")
        self.missing = missing
        self.partial = partial


@dataclass(frozen=True)
class VersionedRecord:
    kind: str
    id: str
    body: Mapping[str, Any]
    acp_ts: Timestamp
    acp_ts_end: Timestamp | None = None

    @property
    def live(self) -> bool:
        return self.acp_ts_end is None

    @property
    def deleted(self) -> bool:
        return bool(self.body.get("deleted"))

    def covers(self, at: Timestamp) -> bool:
        return self.acp_ts <= at and (self.acp_ts_end is None or at < self.acp_ts_end)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "id": self.id, "acp_ts": str(self.acp_ts)}
        if self.acp_ts_end is not None:
            out["acp_ts_end"] = str(self.acp_ts_end)
        out["body"] = thaw(self.body)
        return out


# -- typed views over record bodies -------------------------------------------


@dataclass(frozen=True)
class Crate:
    crate_id: str
    crate_type: str
    parent_crate_id: str | None
    acp_boundary: Boundary | None
    acp_location: Location | None
    long_name: str = ""
    description: str = ""

    @classmethod
    def from_record(cls, rec: VersionedRecord) -> Crate:
        b = rec.body
        loc = location_from_json(b["acp_location"]) if isinstance(b.get("acp_location"), Mapping) else None
        system = loc.system if loc is not None else "unknown"
        boundary = None
        if b.get("acp_boundary") is not None:
            boundary = Boundary.from_json(thaw(b["acp_boundary"]), system)
        return cls(
            crate_id=rec.id,
            crate_type=str(b.get("crate_type", "other")),
            parent_crate_id=b.get("parent_crate_id"),
            acp_boundary=boundary,
            acp_location=loc,
            long_name=str(b.get("long-name", b.get("long_name", ""))),
            description=str(b.get("description", "")),
        )

    @property
    def floor(self) -> int | None:
        return self.acp_location.f if isinstance(self.acp_location, BuildingLocation) else None


@dataclass(frozen=True)
class SensorMeta:
    acp_id: str
    acp_type: str
    owner: str
    source: str
    features: tuple[str, ...]
    acp_location: Location | None

    @property
    def parent_crate_id(self) -> str | None:
        return getattr(self.acp_location, "parent_crate_id", None)

    @classmethod
    def from_record(cls, rec: VersionedRecord) -> SensorMeta:
        b = rec.body
        feats = b.get("features", ())
        if isinstance(feats, str):
            feats = [f.strip() for f in feats.split(",") if f.strip()]
        loc = location_from_json(b["acp_location"]) if isinstance(b.get("acp_location"), Mapping) else None
        return cls(
            acp_id=rec.id,
            acp_type=str(b.get("acp_type", b.get("type", "unknown"))),
            owner=str(b.get("owner", "")),
            source=str(b.get("source", "")),
            features=tuple(feats),
            acp_location=loc,
        )


@dataclass(frozen=True)
class Person:
    person_id: str
    name: str
    affiliations: tuple[str, ...]
    occupies: tuple[str, ...]
    roles: tuple[str, ...] = ()

    @classmethod
    def from_record(cls, rec: VersionedRecord) -> Person:
        b = rec.body
        return cls(
            person_id=rec.id,
            name=str(b.get("name", "")),
            affiliations=tuple(b.get("affiliations", ())),
            occupies=tuple(b.get("occupies", ())),
            roles=tuple(b.get("roles", ())),
        )


# -- store ----------------------------------------------------------------------

History = tuple[VersionedRecord, ...]


class Snapshot:
    """Immutable point-in-time view of the store."""

    def __init__(self, records: Mapping[tuple[str, str], History], version: int):
        self._records = records
        self.version = version
        self.reads = 0
        self._children: dict[str, list[str]] | None = None
        self._perm_index: dict[str, list[str]] | None = None

    # raw access

    def history(self, kind: str, oid: str) -> History:
        try:
            return self._records[(kind, oid)]
        except KeyError:
            raise NotFound(f"{kind} {oid!r}") from None

    def has(self, kind: str, oid: str, include_deleted: bool = False) -> bool:
        hist = self._records.get((kind, oid))
        return bool(hist) and (include_deleted or not hist[-1].deleted)

    def get(self, kind: str, oid: str, at: Timestamp | None = None) -> VersionedRecord:
        self.reads += 1
        hist = self.history(kind, oid)
        if at is None:
            return hist[-1]
        if at < hist[0].acp_ts:
            raise NoRecordAt(f"{kind} {oid!r} has no record at {at}")
        lo, hi = 0, len(hist) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if hist[mid].acp_ts <= at:
                lo = mid
            else:
                hi = mid - 1
        return hist[lo]

    def ids(self, kind: str) -> list[str]:
        return sorted(oid for (k, oid), hist in self._records.items() if k == kind and not hist[-1].deleted)

    def live(self, kind: str) -> Iterator[VersionedRecord]:
        for oid in self.ids(kind):
            yield self._records[(kind, oid)][-1]

    # typed helpers

    def crate(self, crate_id: str) -> Crate:
        rec = self.get(CRATE, crate_id)
        if rec.deleted:
            raise NotFound(f"crate {crate_id!r}")
        return Crate.from_record(rec)

    def sensor(self, acp_id: str) -> SensorMeta:
        rec = self.get(SENSOR, acp_id)
        if rec.deleted:
            raise NotFound(f"sensor {acp_id!r}")
        return SensorMeta.from_record(rec)

    def person(self, person_id: str) -> Person:
        rec = self.get(PERSON, person_id)
        if rec.deleted:
            raise NotFound(f"person {person_id!r}")
        return Person.from_record(rec)

    # hierarchy

    def _parent_of(self, kind: str, oid: str) -> str | None:
        rec = self.get(kind, oid)
        return None if rec.deleted else rec.body.get(_PARENT_FIELD[kind])

    def ancestors(self, oid: str, kind: str | None = None) -> list[str]:
        """Crate ids above ``oid``, nearest first. Sensors start at their own crate."""
        if kind is None:
            kind = CRATE if self.has(CRATE, oid) else SENSOR if self.has(SENSOR, oid) else None
            if kind is None:
                raise NotFound(oid)
        if kind == SENSOR:
            start = self.sensor(oid).parent_crate_id
            chain: list[str] = []
            if start is None:
                return chain
            if not self.has(CRATE, start):
                raise DanglingParent(start, chain)
            chain.append(start)
            return chain + self._walk_up(CRATE, start, chain)
        if not self.has(kind, oid):
            raise NotFound(f"{kind} {oid!r}")
        return self._walk_up(kind, oid, [])

    def _walk_up(self, kind: str, oid: str, prefix: list[str]) -> list[str]:
        out: list[str] = []
        seen = {oid}
        cur = self._parent_of(kind, oid)
        while cur is not None:
            if not self.has(kind, cur):
                raise DanglingParent(cur, prefix + out)
            if cur in seen:  # unreachable while writes are validated
                raise CyclicParent(cur)
            seen.add(cur)
            out.append(cur)
            cur = self._parent_of(kind, cur)
        return out

    def is_descendant(self, oid: str, ancestor_id: str) -> bool:
        if not (self.has(CRATE, ancestor_id) or self.has(SENSOR, ancestor_id)):
            raise NotFound(ancestor_id)
        if oid == ancestor_id:
            if not (self.has(CRATE, oid) or self.has(SENSOR, oid)):
                raise NotFound(oid)
            return True
        try:
            return ancestor_id in self.ancestors(oid)
        except DanglingParent as exc:
            return ancestor_id in exc.partial

    def children_index(self) -> dict[str, list[str]]:
        if self._children is None:
            idx: dict[str, list[str]] = {}
            for rec in self.live(CRATE):
                parent = rec.body.get("parent_crate_id")
                if parent is not None:
                    idx.setdefault(parent, []).append(rec.id)
            for kids in idx.values():
                kids.sort()
            self._children = idx
        return self._children

    def descendants(self, crate_id: str) -> list[str]:
        idx = self.children_index()
        out, stack = [], list(reversed(idx.get(crate_id, [])))
        while stack:
            cid = stack.pop()
            out.append(cid)
            stack.extend(reversed(idx.get(cid, [])))
        return out

    def crate_tree(self, crate_id: str, depth: int | None = None) -> dict[str, Any]:
        """Crate body with nested ``children`` down to ``depth`` levels (None = unlimited)."""
        rec = self.get(CRATE, crate_id)
        if rec.deleted:
            raise NotFound(f"crate {crate_id!r}")
        return self._tree(rec, depth)

    def _tree(self, rec: VersionedRecord, depth: int | None) -> dict[str, Any]:
        node = crate_json(rec)
        if depth is None or depth > 0:
            nxt = None if depth is None else depth - 1
            node["children"] = [
                self._tree(self.get(CRATE, cid), nxt) for cid in self.children_index().get(rec.id, [])
            ]
        return node

    def sensors_in_crate(self, crate_id: str, recursive: bool = False) -> list[SensorMeta]:
        if not self.has(CRATE, crate_id):
            raise NotFound(f"crate {crate_id!r}")
        crates = {crate_id}
        if recursive:
            crates.update(self.descendants(crate_id))
        out = [s for s in (SensorMeta.from_record(r) for r in self.live(SENSOR)) if s.parent_crate_id in crates]
        return sorted(out, key=lambda s: s.acp_id)

    def permissions_on(self, objects: Iterable[str]) -> list[VersionedRecord]:
        """Live permission records whose object is one of ``objects`` (one read)."""
        self.reads += 1
        if self._perm_index is None:
            idx: dict[str, list[str]] = {}
            for rec in self.live(PERMISSION):
                idx.setdefault(str(rec.body.get("object")), []).append(rec.id)
            self._perm_index = idx
        out = []
        for obj in objects:
            for pid in self._perm_index.get(obj, []):
                out.append(self._records[(PERMISSION, pid)][-1])
        return out


def crate_json(rec: VersionedRecord) -> dict[str, Any]:
    """API shape of a crate: id and timestamp first, then the stored body."""
    body = thaw(rec.body)
    out: dict[str, Any] = {"crate_id": rec.id}
    for k, v in body.items():
        if k in ("crate_id", "acp_ts"):
            continue
        out[k] = v
        if k == "crate_type":
            out["acp_ts"] = str(rec.acp_ts)
    out.setdefault("acp_ts", str(rec.acp_ts))
    return out


def sensor_json(rec: VersionedRecord) -> dict[str, Any]:
    body = thaw(rec.body)
    out: dict[str, Any] = {"acp_id": rec.id, "acp_ts": str(rec.acp_ts)}
    out.update({k: v for k, v in body.items() if k not in ("acp_id", "acp_ts")})
    return out


class MetadataStore:
    """Single-writer versioned store with optional NDJSON journal.

    ``listeners`` are called with each accepted record after the write.
    """

    def __init__(self, journal_path: str | os.PathLike[str] | None = None):
        self._lock = threading.RLock()
        self._records: dict[tuple[str, str], History] = {}
        self._version = 0
        self._snapshot: Snapshot | None = None
        self.journal_path = os.fspath(journal_path) if journal_path is not None else None
        self.listeners: list[Callable[[VersionedRecord], None]] = []

    def snapshot(self) -> Snapshot:
        with self._lock:
            if self._snapshot is None or self._snapshot.version != self._version:
                self._snapshot = Snapshot(dict(self._records), self._version)
            snap = self._snapshot
        # a fresh wrapper so read counters are per caller
        out = Snapshot(snap._records, snap.version)
        out._children, out._perm_index = snap.children_index(), snap._perm_index
        return out

    def upsert(self, kind: str, oid: str, body: Mapping[str, Any], at: Timestamp | str) -> VersionedRecord:
        if kind not in KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        at = Timestamp.parse(at)
        with self._lock:
            hist = self._records.get((kind, oid), ())
            if hist and at <= hist[-1].acp_ts:
                raise TimestampRegression(f"{kind} {oid!r}: {at} is not after {hist[-1].acp_ts}")
            self._validate(kind, oid, body)
            rec = VersionedRecord(kind, oid, freeze(body), at)
            if hist:
                prev = hist[-1]
                hist = (*hist[:-1], VersionedRecord(prev.kind, prev.id, prev.body, prev.acp_ts, at))
            self._records[(kind, oid)] = (*hist, rec)
            self._version += 1
            if self.journal_path is not None:
                with open(self.journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
        for cb in list(self.listeners):
            cb(rec)
        return rec

    def delete(self, kind: str, oid: str, at: Timestamp | str) -> VersionedRecord:
        return self.upsert(kind, oid, {"deleted": True}, at)

    def _validate(self, kind: str, oid: str, body: Mapping[str, Any]) -> None:
        pfield = _PARENT_FIELD.get(kind)
        if pfield is not None and body.get(pfield) is not None:
            cur: str | None = body[pfield]
            seen = {oid}
            while cur is not None:
                if cur in seen:
                    raise CyclicParent(f"{kind} {oid!r}: parent chain loops through {cur!r}")
                seen.add(cur)
                hist = self._records.get((kind, cur))
                if not hist or hist[-1].deleted:
                    break
                cur = hist[-1].body.get(pfield)
        if kind == PERSON:
            for cid in body.get("occupies", ()):
                hist = self._records.get((CRATE, cid))
                if not hist or hist[-1].deleted:
                    raise UnknownCrate(f"person {oid!r} occupies unknown crate {cid!r}")
        if kind == SENSOR and isinstance(body.get("acp_location"), Mapping):
            location_from_json(body["acp_location"])

    # convenience passthroughs to a fresh snapshot

    def get(self, kind: str, oid: str, at: Timestamp | None = None) -> VersionedRecord:
        return self.snapshot().get(kind, oid, at)

    def all_records(self) -> Iterator[VersionedRecord]:
        with self._lock:
            items = sorted(self._records.items())
        for _, hist in items:
            yield from hist

    def dump(self, path: str | os.PathLike[str]) -> None:
        """Write full history (with expiries), ordered by creation time."""
        recs = sorted(self.all_records(), key=lambda r: (r.acp_ts.value, r.kind, r.id))
        with open(path, "w", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def replay(cls, path: str | os.PathLike[str], journal: bool = False) -> MetadataStore:
        """Rebuild a store from a journal; line order is write order."""
        store = cls()
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        for obj in lines:
            store.upsert(obj["kind"], obj["id"], obj["body"], obj["acp_ts"])
        if journal:
            store.journal_path = os.fspath(path)
        return store

    def load_ndjson(self, path: str | os.PathLike[str], kind: str | None = None, at: Timestamp | str | None = None) -> int:
        """Seed from NDJSON: journal lines, or bare bodies when ``kind`` is given."""
        n = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if kind is None:
                    self.upsert(obj["kind"], obj["id"], obj["body"], obj["acp_ts"])
                else:
                    oid = obj.get("id") or obj.get(_ID_FIELD[kind])
                    body = {k: v for k, v in obj.items() if k not in ("id", "acp_ts")}
                    self.upsert(kind, oid, body, obj.get("acp_ts", at))
                n += 1
        return n


_ID_FIELD = {CRATE: "crate_id", SENSOR: "acp_id", PERSON: "person_id", ORG: "org_id", PERMISSION: "permission_id"}
