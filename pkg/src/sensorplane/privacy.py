"""Who may read which sensor's data.

A person may read a sensor when they occupy the sensor's crate or any crate
above it, or when a permission grants the read on the sensor itself or on any
crate above it. Permission subjects are person ids or roles; evaluation only
walks upward from the sensor, never across siblings. Anything not granted is
denied.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping

from .core import Envelope, PlatformError, Timestamp
from .metadata import (
    ORG,
    PERMISSION,
    SENSOR,
    DanglingParent,
    MetadataStore,
    NotFound,
    Person,
    Snapshot,
    VersionedRecord,
)
from .rts import FEED, BusEvent, RealTimeServer, VerticleClass, VerticleContext, VerticleSpec

READ = "sensor_data_read"
BUILDING_MANAGER = "building_manager"
DEPARTMENT_MEMBER = "department_member"


class NoData(PlatformError, LookupError):
    pass


@dataclass(frozen=True)
class Decision:
    allow: bool
    proof: tuple[str, ...]
    depends_on: frozenset[str] = frozenset()

    @property
    def decision(self) -> str:
        return "allow" if self.allow else "deny"


def roles_of(person: Person) -> set[str]:
    roles = set(person.roles)
    if person.affiliations:
        roles.add(DEPARTMENT_MEMBER)
    return roles


def _orgs_of(snap: Snapshot, person: Person) -> set[str]:
    orgs: set[str] = set()
    for org in person.affiliations:
        orgs.add(org)
        if snap.has(ORG, org):
            try:
                orgs.update(snap.ancestors(org, kind=ORG))
            except DanglingParent as exc:
                orgs.update(exc.partial)
    return orgs


def _subject_matches(snap: Snapshot, perm: Mapping[str, Any], person: Person) -> bool:
    subject = perm.get("subject")
    if subject == person.person_id:
        return True
    if subject not in roles_of(person):
        return False
    scope = perm.get("org")
    return scope is None or scope in _orgs_of(snap, person)


def check(snap: Snapshot, person_id: str, verb: str, sensor_id: str) -> Decision:
    """Allow or deny, with the chain of objects that justified the answer.

    Raises NotFound for an unknown person or sensor.
    """
    person = snap.person(person_id)
    sensor = snap.sensor(sensor_id)
    try:
        chain = snap.ancestors(sensor_id, kind=SENSOR)
        missing: list[str] = []
    except DanglingParent as exc:
        chain, missing = exc.partial, [exc.missing]
    deps = frozenset({person_id, sensor_id, *chain, *missing})
    measures = sensor.parent_crate_id

    if verb == READ:
        for i, crate in enumerate(chain):
            if crate in person.occupies:
                proof = (f"sensor:{sensor_id}", f"measures:{measures}", *(f"parent:{c}" for c in chain[1 : i + 1]),
                         f"occupies:{person_id}")
                return Decision(True, proof, deps)

    objects = [sensor_id, *chain]
    perms = snap.permissions_on(objects)
    rank = {obj: i for i, obj in enumerate(objects)}
    for rec in sorted(perms, key=lambda r: (rank.get(str(r.body.get("object")), len(objects)), r.id)):
        body = rec.body
        if body.get("verb") != verb or not _subject_matches(snap, body, person):
            continue
        obj = str(body.get("object"))
        upto = rank[obj]
        path = [f"sensor:{sensor_id}"]
        if upto > 0:
            path.append(f"measures:{measures}")
            path.extend(f"parent:{c}" for c in chain[1:upto])
        path.append(f"permission:{rec.id}")
        return Decision(True, tuple(path), deps)
    return Decision(False, (f"sensor:{sensor_id}", *(f"parent:{c}" for c in chain), "default:deny"), deps)


def check_all(snap: Snapshot, person_id: str, verb: str, sensor_ids: Iterable[str]) -> Decision:
    """Allow only when every sensor is allowed; used for derived events."""
    proof: list[str] = []
    deps: set[str] = {person_id}
    ids = list(sensor_ids)
    if not ids:
        return Decision(False, ("no-sensors",), frozenset(deps))
    for sid in ids:
        try:
            d = check(snap, person_id, verb, sid)
        except NotFound:
            return Decision(False, (f"sensor:{sid}", "unknown"), frozenset(deps | {sid}))
        deps |= d.depends_on
        if not d.allow:
            return Decision(False, d.proof, frozenset(deps))
        proof.extend(d.proof)
    return Decision(True, tuple(proof), frozenset(deps))


class PrivacyFilter:
    """Cached decisions over a live store.

    A write to any object in a cached decision's proof path drops that entry;
    any permission write clears the whole cache.
    """

    def __init__(self, store: MetadataStore, verb: str = READ, audit_path: str | None = None):
        self.store = store
        self.verb = verb
        self.audit_path = audit_path
        self._lock = threading.Lock()
        self._cache: dict[tuple[str, str], Decision] = {}
        self._deps: dict[str, set[tuple[str, str]]] = {}
        self.hits = 0
        self.misses = 0
        store.listeners.append(self._on_write)

    def close(self) -> None:
        if self._on_write in self.store.listeners:
            self.store.listeners.remove(self._on_write)

    def _on_write(self, rec: VersionedRecord) -> None:
        with self._lock:
            if rec.kind in (PERMISSION, ORG):
                self._cache.clear()
                self._deps.clear()
                return
            for key in self._deps.pop(rec.id, set()):
                self._cache.pop(key, None)

    def check(self, person_id: str, sensor_id: str) -> Decision:
        key = (person_id, sensor_id)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.hits += 1
                return hit
        snap = self.store.snapshot()
        try:
            d = check(snap, person_id, self.verb, sensor_id)
        except NotFound as exc:
            d = Decision(False, (f"unknown:{exc}",), frozenset({person_id, sensor_id}))
        with self._lock:
            self.misses += 1
            if snap.version == self.store.snapshot().version:
                self._cache[key] = d
                for obj in d.depends_on:
                    self._deps.setdefault(obj, set()).add(key)
        self._audit(person_id, sensor_id, d)
        return d

    def allows(self, person_id: str, env: Envelope) -> bool:
        return self.check(person_id, env.acp_id).allow

    def allows_all(self, person_id: str, sensor_ids: Iterable[str]) -> bool:
        ids = list(sensor_ids)
        return bool(ids) and all(self.check(person_id, s).allow for s in ids)

    def filter(self, person_id: str, envelopes: Iterable[Envelope]) -> Iterator[Envelope]:
        for env in envelopes:
            if self.allows(person_id, env):
                yield env

    def _audit(self, person_id: str, sensor_id: str, d: Decision) -> None:
        if self.audit_path is None:
            return
        line = {"person": person_id, "sensor": sensor_id, "decision": d.decision,
                "proof_path": list(d.proof), "ts": str(Timestamp.now())}
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(line) + "\n")


def filter_stream(store: MetadataStore, person_id: str, envelopes: Iterable[Envelope]) -> Iterator[Envelope]:
    pf = PrivacyFilter(store)
    try:
        yield from pf.filter(person_id, envelopes)
    finally:
        pf.close()


class PrivacyVerticle:
    """Republishes the feed envelopes a person may read on ``private.<person>``."""

    def __init__(self, rts: RealTimeServer, pf: PrivacyFilter, person_id: str, address: str = FEED):
        self.pf = pf
        self.person_id = person_id
        self.out_address = f"private.{person_id}"
        self.passed = 0
        self.blocked = 0
        self.verticle = rts.deploy(
            VerticleSpec(f"Privacy[{person_id}]", VerticleClass.OUTBOUND, (address,), self._handle)
        )

    def _handle(self, event: BusEvent, ctx: VerticleContext) -> None:
        env = event.body
        if not isinstance(env, Envelope):
            return
        if self.pf.allows(self.person_id, env):
            self.passed += 1
            ctx.publish(self.out_address, env, dict(event.headers))
        else:
            self.blocked += 1


def load_permissions(store: MetadataStore, path: str, at: Timestamp | str) -> int:
    """Seed permissions from NDJSON bodies ``{permission_id?, subject, verb, object, org?}``."""
    n = 0
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            body = json.loads(line)
            pid = body.pop("permission_id", None) or f"perm-{i}"
            for key in ("subject", "verb", "object"):
                if key not in body:
                    raise ValueError(f"{path}:{i}: permission without {key!r}")
            store.upsert(PERMISSION, pid, body, at)
            n += 1
    return n


@dataclass(frozen=True)
class AggregateView:
    crate_id: str
    feature: str
    value: float
    count: int
    as_of: Timestamp

    def to_json(self) -> dict[str, Any]:
        return {"crate_id": self.crate_id, "feature": self.feature, "value": self.value,
                "count": self.count, "acp_ts": str(self.as_of)}


def aggregate_view(
    snap: Snapshot, latest: Mapping[str, Envelope], crate_id: str, feature: str
) -> AggregateView:
    """Mean of the latest ``feature`` value over sensors in the crate and below it.

    The result carries the count but never the contributing sensor ids.
    """
    values: list[float] = []
    newest: Timestamp | None = None
    for meta in snap.sensors_in_crate(crate_id, recursive=True):
        env = latest.get(meta.acp_id)
        if env is None or feature not in env.payload_cooked:
            continue
        values.append(float(env.payload_cooked[feature]))
        if newest is None or env.acp_ts > newest:
            newest = env.acp_ts
    if not values or newest is None:
        raise NoData(f"no {feature} readings under {crate_id!r}")
    return AggregateView(crate_id, feature, math.fsum(values) / len(values), len(values), newest)

