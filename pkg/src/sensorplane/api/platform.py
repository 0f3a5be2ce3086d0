"""Assemble a running platform from a JSON config.

Config keys (all optional except where noted)::

    brokers          broker names; the first is the local ingestion broker
    bridges          [{local?, remote, filters, direction}]
    decoders         names of shipped decoders to enable (default: all)
    rules_file       CEP rules, one per line
    permissions_file NDJSON permission bodies
    metadata         [{kind, path}] NDJSON seeds, used only when no journal exists yet
    transforms       path to, or list of, building coordinate transforms
    data_dir         where shards and the metadata journal live (required)
    cep              {k, directional, window_s, baseline_s, radius_m, theta}

Relative paths resolve against the config file's directory; a ``fixture:``
prefix points into the bundled fixtures.
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping

from ..cep import AnalysisVerticle, Analyzer, CEPEngine, FeatureExtractor, StatisticalDetector, VicinityConfig, load_rules
from ..core import CoordinateTransform, Timestamp, metric_distance
from ..decoders import COFFEE_NODE, ELSYS_CO2, SMARTPLUG, DecoderManager
from ..fixtures import path as fixture_path
from ..metadata import KINDS, PERMISSION, MetadataStore, NotFound
from ..privacy import PrivacyFilter, load_permissions
from ..pubsub import Broker, BridgeConfig, bridge
from ..rts import FeedHandler, LatestReadings, MessageFiler, RealTimeServer, RTMonitor
from .handlers import Api, ApiRequest

SHIPPED_DECODERS = {d.name: d for d in (SMARTPLUG, ELSYS_CO2, COFFEE_NODE)}
JOURNAL = "metadata.ndjson"
SEED_TS = "1589470000.5"
DEFAULT_CONFIG = fixture_path("platform.json")


def load_platform_config(path: str) -> tuple[dict[str, Any], str]:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg, os.path.dirname(os.path.abspath(path))


def resolve(base: str, p: str) -> str:
    if p.startswith("fixture:"):
        return fixture_path(p[len("fixture:"):])
    return p if os.path.isabs(p) else os.path.join(base, p)


def load_transforms(spec: Any, base: str = ".") -> dict[str, CoordinateTransform]:
    if spec is None:
        return {}
    if isinstance(spec, str):
        with open(resolve(base, spec), encoding="utf-8") as fh:
            spec = json.load(fh)
    return {t.building: t for t in (CoordinateTransform.from_json(o) for o in spec)}


def seed_store(store: MetadataStore, cfg: Mapping[str, Any], base: str) -> None:
    for entry in cfg.get("metadata", []):
        kind = entry["kind"]
        if kind not in KINDS:
            raise ValueError(f"metadata: unknown kind {kind!r}")
        store.load_ndjson(resolve(base, entry["path"]), kind=kind, at=SEED_TS)
    if cfg.get("permissions_file"):
        load_permissions(store, resolve(base, cfg["permissions_file"]), SEED_TS)


def open_store(data_dir: str, cfg: Mapping[str, Any] | None = None, base: str = ".") -> MetadataStore:
    """Replay the journal when there is one; otherwise seed a fresh journal from config."""
    journal = os.path.join(data_dir, JOURNAL)
    if os.path.exists(journal):
        return MetadataStore.replay(journal, journal=True)
    os.makedirs(data_dir, exist_ok=True)
    store = MetadataStore(journal)
    if cfg is not None:
        seed_store(store, cfg, base)
    return store


def sensor_distance(store: MetadataStore, transforms: Mapping[str, CoordinateTransform]) -> Callable[[str, str], float | None]:
    def dist(a: str, b: str) -> float | None:
        snap = store.snapshot()
        try:
            la, lb = snap.sensor(a).acp_location, snap.sensor(b).acp_location
        except NotFound:
            return None
        if la is None or lb is None:
            return None
        return metric_distance(la, lb, transforms)

    return dist


def sensor_crate(store: MetadataStore) -> Callable[[str], str | None]:
    def crate_of(acp_id: str) -> str | None:
        try:
            return store.snapshot().sensor(acp_id).parent_crate_id
        except NotFound:
            return None

    return crate_of


class Platform:
    def __init__(
        self,
        cfg: Mapping[str, Any],
        base_dir: str = ".",
        threaded: bool = True,
        clock: Callable[[], Timestamp] = Timestamp.now,
        data_dir: str | None = None,
    ):
        self.config = dict(cfg)
        dd = data_dir or cfg.get("data_dir")
        if not dd:
            raise ValueError("config needs data_dir")
        self.data_dir = resolve(base_dir, str(dd))
        names = list(cfg.get("brokers", ["local"])) or ["local"]
        self.brokers = {n: Broker(n) for n in names}
        self.broker = self.brokers[names[0]]
        self.bridges = []
        for b in cfg.get("bridges", []):
            local = self.brokers[b.get("local", names[0])]
            self.bridges.append(bridge(local, self.brokers[b["remote"]], BridgeConfig.from_json(b)))

        wanted = cfg.get("decoders")
        specs = list(SHIPPED_DECODERS.values()) if wanted is None else [SHIPPED_DECODERS[n] for n in wanted]
        self.decoders = DecoderManager(specs, with_builtins=False)

        self.transforms = load_transforms(cfg.get("transforms"), base_dir)
        self.store = open_store(self.data_dir, cfg, base_dir)
        self.latest = LatestReadings.from_shards(self.data_dir)

        self.rts = RealTimeServer(threaded=threaded, clock=clock, system_id=names[0])
        self.feed = FeedHandler(self.rts, self.broker, self.decoders)
        self.filer = MessageFiler(self.rts, self.data_dir)
        self.latest.attach(self.rts)
        self.monitor = RTMonitor(self.rts)

        cep = cfg.get("cep", {})
        rules = load_rules(resolve(base_dir, cfg["rules_file"])) if cfg.get("rules_file") else []
        distance = sensor_distance(self.store, self.transforms)
        vicinity = VicinityConfig(
            rule=cep.get("vicinity", "same_crate"),
            window_s=float(cep.get("window_s", 900)),
            baseline_s=float(cep.get("baseline_s", 3600)),
            radius_m=float(cep.get("radius_m", 10)),
        )
        self.engine = CEPEngine(rules, k=int(cep.get("k", 100)), distance=distance, crate_of=sensor_crate(self.store))
        self.analyzer = Analyzer(
            self.engine,
            FeatureExtractor(vicinity, distance),
            StatisticalDetector(theta=float(cep.get("theta", 3.0)), directional=bool(cep.get("directional", True))),
        )
        self.analysis = AnalysisVerticle(self.rts, self.analyzer)

        self.privacy = PrivacyFilter(self.store)
        self.api = Api(self.store, self.latest, self.data_dir, self.privacy, self.stats)

    @classmethod
    def from_config(cls, path: str = DEFAULT_CONFIG, **kwargs: Any) -> Platform:
        cfg, base = load_platform_config(path)
        return cls(cfg, base, **kwargs)

    def publish(self, topic: str, payload: bytes | str) -> int:
        return self.broker.publish(topic, payload)

    def settle(self, timeout: float = 10.0) -> None:
        if self.rts.threaded:
            self.rts.wait_idle(timeout)
        else:
            self.rts.run_until_idle()

    def stats(self) -> dict[str, Any]:
        return {
            "received": self.feed.received,
            "fed": self.feed.fed,
            "deadletters": self.feed.deadletters,
            "stored": self.filer.written,
            "atomic_events": self.analysis.atomic_count,
            "complex_events": self.analysis.complex_count,
            "permissions": len(self.store.snapshot().ids(PERMISSION)),
        }

    def close(self) -> None:
        self.settle()
        self.feed.close()
        self.privacy.close()
        self.rts.shutdown()
        for b in self.bridges:
            b.close()


def rebuild(data_dir: str) -> Api:
    """An API over state rebuilt purely from the journal and shards on disk."""
    journal = os.path.join(data_dir, JOURNAL)
    if not os.path.exists(journal):
        raise FileNotFoundError(journal)
    store = MetadataStore.replay(journal)
    return Api(store, LatestReadings.from_shards(data_dir), data_dir)


def serve_http(api: Api, host: str = "127.0.0.1", port: int = 8098) -> ThreadingHTTPServer:
    """Minimal HTTP front end; call ``serve_forever`` or run it on a thread."""

    class Handler(BaseHTTPRequestHandler):
        def do_GET(self) -> None:  # noqa: N802
            resp = api.handle(ApiRequest.from_url(self.path))
            self.send_response(resp.status)
            self.send_header("Content-Type", resp.content_type)
            self.send_header("Content-Length", str(len(resp.body)))
            self.end_headers()
            self.wfile.write(resp.body)

        def log_message(self, fmt: str, *args: Any) -> None:
            pass

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_background(server: ThreadingHTTPServer) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, name="api-http", daemon=True)
    t.start()
    return t
