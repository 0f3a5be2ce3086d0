"""Query API as plain request handlers; any HTTP front end just calls ``Api.handle``."""

from __future__ import annotations

import calendar
import json
import os
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any, Callable, Iterator, Mapping
from urllib.parse import parse_qsl, urlsplit

from ..core import MalformedTimestamp, Timestamp, thaw
from ..metadata import SENSOR, MetadataStore, NotFound, sensor_json
from ..privacy import PrivacyFilter
from ..rts import LatestReadings, day_shard_path, read_shard
from .svg import DEFAULT_SCALE, render_floor_svg

JSON = "application/json"
SVG = "image/svg+xml"
MAX_RANGE_DAYS = 366
_META_KEYS = ("acp_id", "acp_ts", "acp_type", "ts", "dev_id", "metadata", "event", "event_value")


class BadRequest(ValueError):
    pass


class Forbidden(PermissionError):
    pass


@dataclass(frozen=True)
class ApiRequest:
    path: str
    query: Mapping[str, str] = field(default_factory=dict)
    method: str = "GET"

    @classmethod
    def from_url(cls, url: str, method: str = "GET") -> ApiRequest:
        parts = urlsplit(url)
        return cls(parts.path, dict(parse_qsl(parts.query, keep_blank_values=True)), method)


@dataclass(frozen=True)
class ApiResponse:
    status: int
    content_type: str
    body: bytes

    def json(self) -> Any:
        return json.loads(self.body)

    @property
    def text(self) -> str:
        return self.body.decode("utf-8")


def _json(obj: Any, status: int = 200) -> ApiResponse:
    return ApiResponse(status, JSON, json.dumps(obj, ensure_ascii=False, indent=2).encode("utf-8") + b"\n")


def reading_json(env: Any) -> dict[str, Any]:
    """Reading as served: ``features`` is what the device reported, not the cooked subset."""
    orig = thaw(env.payload_original)
    fields = orig.get("payload_fields")
    if not isinstance(fields, dict):
        fields = {k: v for k, v in orig.items() if k not in _META_KEYS and not k.startswith("acp_")}
    return {"acp_id": env.acp_id, "acp_ts": str(env.acp_ts), "features": fields}


def _ts_param(q: Mapping[str, str], key: str) -> Timestamp | None:
    if key not in q:
        return None
    try:
        return Timestamp.parse(q[key])
    except MalformedTimestamp:
        raise BadRequest(f"{key}: not a timestamp: {q[key]!r}") from None


class Api:
    def __init__(
        self,
        store: MetadataStore,
        latest: LatestReadings,
        data_dir: str | None = None,
        privacy: PrivacyFilter | None = None,
        stats: Callable[[], Mapping[str, Any]] | None = None,
        svg_scale: float = DEFAULT_SCALE,
    ):
        self.store = store
        self.latest = latest
        self.data_dir = data_dir
        self.privacy = privacy if privacy is not None else PrivacyFilter(store)
        self.stats_fn = stats
        self.svg_scale = svg_scale
        self.requests = 0
        self._routes: list[tuple[tuple[str, ...], int, Callable[..., ApiResponse]]] = [
            (("bim", "get"), 2, self._bim),
            (("sensors", "bim", "get"), 1, self._sensors_in_crate),
            (("sensors", "get"), 1, self._sensor),
            (("readings", "get"), 1, self._readings),
            (("space", "get_bim_floor_number"), 1, self._space),
            (("stats",), 0, self._stats),
        ]

    def handle(self, req: ApiRequest) -> ApiResponse:
        self.requests += 1
        if req.method.upper() != "GET":
            return _json({"error": f"method {req.method} not allowed"}, 405)
        segs = [s for s in req.path.split("/") if s]
        try:
            for prefix, nargs, fn in self._routes:
                n = len(prefix)
                if tuple(segs[:n]) == prefix:
                    args = segs[n:]
                    required = 0 if nargs == 0 else 1
                    if not required <= len(args) <= nargs:
                        raise BadRequest(f"bad arguments for /{'/'.join(prefix)}")
                    return fn(req.query, *args)
            return _json({"error": f"no route for {req.path}"}, 404)
        except BadRequest as exc:
            return _json({"error": str(exc)}, 400)
        except Forbidden as exc:
            return _json({"error": str(exc)}, 403)
        except NotFound as exc:
            return _json({"error": f"not found: {exc.args[0] if exc.args else exc}"}, 404)

    def get(self, url: str) -> ApiResponse:
        return self.handle(ApiRequest.from_url(url))

    # -- privacy --------------------------------------------------------------

    def _guard(self, q: Mapping[str, str], acp_id: str) -> None:
        person = q.get("as")
        if person is None:
            return
        d = self.privacy.check(person, acp_id)
        if not d.allow:
            raise Forbidden(f"{person} may not read {acp_id}")

    # -- endpoints ------------------------------------------------------------

    def _bim(self, q: Mapping[str, str], crate_id: str, depth: str = "0") -> ApiResponse:
        try:
            d = int(depth)
        except ValueError:
            raise BadRequest(f"depth must be an integer, got {depth!r}") from None
        if d < 0:
            raise BadRequest("depth must be >= 0")
        return _json(self.store.snapshot().crate_tree(crate_id, d))

    def _sensor(self, q: Mapping[str, str], acp_id: str) -> ApiResponse:
        rec = self.store.snapshot().get(SENSOR, acp_id)
        if rec.deleted:
            raise NotFound(acp_id)
        self._guard(q, acp_id)
        return _json(sensor_json(rec))

    def _sensors_in_crate(self, q: Mapping[str, str], crate_id: str) -> ApiResponse:
        snap = self.store.snapshot()
        metas = snap.sensors_in_crate(crate_id)
        person = q.get("as")
        out = []
        for m in metas:
            if person is not None and not self.privacy.check(person, m.acp_id).allow:
                continue
            out.append(sensor_json(snap.get(SENSOR, m.acp_id)))
        return _json(out)

    def _readings(self, q: Mapping[str, str], acp_id: str) -> ApiResponse:
        snap = self.store.snapshot()
        if not snap.has(SENSOR, acp_id) and self.latest.get(acp_id) is None:
            raise NotFound(acp_id)
        if snap.has(SENSOR, acp_id):
            self._guard(q, acp_id)
        fmt = q.get("format", "reading")
        if fmt not in ("reading", "envelope"):
            raise BadRequest(f"format must be reading or envelope, got {fmt!r}")
        shape = (lambda e: e.to_json()) if fmt == "envelope" else reading_json
        lo, hi = _ts_param(q, "from"), _ts_param(q, "to")
        if lo is None and hi is None:
            env = self.latest.get(acp_id)
            if env is None:
                raise NotFound(f"no readings for {acp_id}")
            return _json(shape(env))
        if lo is None or hi is None:
            raise BadRequest("a range needs both from and to")
        if hi < lo:
            raise BadRequest("to is before from")
        return _json({"acp_id": acp_id, "readings": [shape(e) for e in self.range(acp_id, lo, hi)]})

    def range(self, acp_id: str, lo: Timestamp, hi: Timestamp) -> Iterator[Any]:
        """Readings with lo <= acp_ts <= hi, read day shard by day shard."""
        if self.data_dir is None:
            return
        day, last = lo.datetime().date(), hi.datetime().date()
        if (last - day).days > MAX_RANGE_DAYS:
            raise BadRequest(f"range longer than {MAX_RANGE_DAYS} days")
        while day <= last:
            path = day_shard_path(self.data_dir, Timestamp.parse(_day_start(day)))
            if os.path.exists(path):
                hits = [e for e in read_shard(path) if e.acp_id == acp_id and lo <= e.acp_ts <= hi]
                hits.sort(key=lambda e: e.acp_ts.value)
                yield from hits
            day += timedelta(days=1)

    def _space(self, q: Mapping[str, str], floor: str) -> ApiResponse:
        try:
            f = int(floor)
        except ValueError:
            raise BadRequest(f"floor must be an integer, got {floor!r}") from None
        svg = render_floor_svg(self.store.snapshot(), f, self.svg_scale)
        return ApiResponse(200, SVG, svg.encode("utf-8"))

    def _stats(self, q: Mapping[str, str]) -> ApiResponse:
        out: dict[str, Any] = {"requests": self.requests, "sensors_with_readings": len(self.latest.all()),
                               "metadata_version": self.store.snapshot().version}
        if self.stats_fn is not None:
            out.update(self.stats_fn())
        return _json(out)


def _day_start(day: Any) -> str:
    return str(calendar.timegm(day.timetuple()))
