"""Real-time server: a shared event bus and the verticles hanging off it.

Each verticle owns a bounded mailbox and runs its handler on one thread of
control, so a handler never overlaps itself. Publishing never blocks: a full
mailbox drops its oldest event and counts the drop. Verticles talk to each
other only through :meth:`RealTimeServer.bus_publish`.

With ``threaded=False`` nothing runs until :meth:`RealTimeServer.run_until_idle`
is called, which makes simulations deterministic.
"""

from __future__ import annotations

import fnmatch
import itertools
import json
import logging
import os
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterator, Mapping, Sequence

from .core import Envelope, FrozenDict, PlatformError, Timestamp
from .decoders import DEADLETTER_TOPIC, DecodeFailure, DecoderManager, deadletter_record
from .pubsub import Broker, BrokerDown, Subscription

log = logging.getLogger(__name__)

MAILBOX_SIZE = 4096
FEED = "platform.feed"
SENSOR_PREFIX = "sensor."
ROUTED_PREFIX = "routed"


class Shutdown(PlatformError, RuntimeError):
    pass


class DuplicateVerticle(PlatformError, ValueError):
    pass


class TooManySubscriptions(PlatformError, RuntimeError):
    pass


class VerticleClass(str, Enum):
    INGESTION = "ingestion"
    STORAGE = "storage"
    ANALYSIS = "analysis"
    OUTBOUND = "outbound"


@dataclass(frozen=True)
class BusEvent:
    address: str
    body: Any
    published_at: Timestamp
    seq: int
    headers: Mapping[str, str] = field(default_factory=FrozenDict)


Handler = Callable[[Any, "VerticleContext"], None]


@dataclass(frozen=True)
class VerticleSpec:
    name: str
    cls: VerticleClass
    addresses: tuple[str, ...]
    handler: Handler
    mailbox_size: int = MAILBOX_SIZE
    on_stop: Callable[[], None] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "addresses", tuple(self.addresses))
        object.__setattr__(self, "cls", VerticleClass(self.cls))


class Mailbox:
    def __init__(self, size: int):
        self.size = size
        self._items: deque[Any] = deque()
        self._cond = threading.Condition()
        self.dropped = 0

    def put(self, item: Any) -> None:
        with self._cond:
            if len(self._items) >= self.size:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)
            self._cond.notify()

    def get(self, timeout: float | None = None) -> Any:
        with self._cond:
            if not self._items:
                self._cond.wait_for(lambda: bool(self._items), timeout)
            return self._items.popleft() if self._items else _EMPTY

    def __len__(self) -> int:
        return len(self._items)

    def clear(self) -> None:
        with self._cond:
            self._items.clear()


_EMPTY = object()
_STOP = object()


class LatencyStats:
    """Handler run times in seconds; keeps the latest ``window`` samples for p99."""

    def __init__(self, window: int = 10000):
        self.count = 0
        self.total = 0.0
        self._recent: deque[float] = deque(maxlen=window)

    def add(self, seconds: float) -> None:
        self.count += 1
        self.total += seconds
        self._recent.append(seconds)

    def summary(self) -> dict[str, float]:
        if not self.count:
            return {"mean_ms": 0.0, "p99_ms": 0.0}
        ordered = sorted(self._recent)
        p99 = ordered[min(len(ordered) - 1, int(0.99 * len(ordered)))]
        return {"mean_ms": 1000 * self.total / self.count, "p99_ms": 1000 * p99}


class VerticleContext:
    """What a handler may touch: the bus and its own subscriptions."""

    def __init__(self, rts: RealTimeServer, verticle: Verticle):
        self._rts = rts
        self._verticle = verticle

    @property
    def name(self) -> str:
        return self._verticle.spec.name

    def now(self) -> Timestamp:
        return self._rts.clock()

    def publish(self, address: str, body: Any, headers: Mapping[str, str] | None = None) -> int:
        self._verticle.published += 1
        return self._rts.bus_publish(address, body, headers=headers)

    def subscribe(self, address: str) -> None:
        self._rts._add_address(self._verticle, address)

    def unsubscribe(self, address: str) -> None:
        self._rts._remove_address(self._verticle, address)


class Verticle:
    """Deployed verticle handle."""

    def __init__(self, rts: RealTimeServer, spec: VerticleSpec):
        self.rts = rts
        self.spec = spec
        self.addresses: list[str] = list(spec.addresses)
        self.mailbox = Mailbox(spec.mailbox_size)
        self.ctx = VerticleContext(rts, self)
        self.received = 0
        self.published = 0
        self.errors = 0
        self.latency = LatencyStats()
        self.live = True
        self._busy = False
        self._thread: threading.Thread | None = None

    @property
    def name(self) -> str:
        return self.spec.name

    def inject(self, item: Any) -> None:
        """Hand an item from outside the bus (e.g. a broker message) to this verticle."""
        if self.live:
            self.mailbox.put(item)

    def _handle(self, item: Any) -> None:
        self.received += 1
        t0 = time.perf_counter()
        try:
            self.spec.handler(item, self.ctx)
        except Exception:  # a failing handler must not take the verticle down
            self.errors += 1
            log.exception("verticle %s handler failed", self.name)
        self.latency.add(time.perf_counter() - t0)

    def _run(self) -> None:
        while True:
            item = self.mailbox.get()
            if item is _STOP:
                break
            if item is _EMPTY:
                continue
            self._busy = True
            try:
                self._handle(item)
            finally:
                self._busy = False

    def step(self) -> bool:
        """Process one queued item inline; False when the mailbox is empty."""
        item = self.mailbox.get(timeout=0)
        if item is _EMPTY or item is _STOP:
            return False
        self._handle(item)
        return True

    @property
    def idle(self) -> bool:
        return not self._busy and len(self.mailbox) == 0

    def stats(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "class": self.spec.cls.value,
            "received": self.received,
            "published": self.published,
            "dropped": self.mailbox.dropped,
            "errors": self.errors,
            **self.latency.summary(),
        }


class RealTimeServer:
    def __init__(
        self,
        threaded: bool = True,
        clock: Callable[[], Timestamp] = Timestamp.now,
        system_id: str = "local",
    ):
        self.threaded = threaded
        self.clock = clock
        self.system_id = system_id
        self._lock = threading.Lock()
        self._verticles: dict[str, Verticle] = {}
        self._route_cache: dict[str, tuple[Verticle, ...]] = {}
        self._seqs: dict[str, itertools.count[int]] = {}
        self._running = True
        self.published = 0

    # -- deployment --------------------------------------------------------

    def deploy(self, spec: VerticleSpec) -> Verticle:
        with self._lock:
            if not self._running:
                raise Shutdown("server is shut down")
            if spec.name in self._verticles:
                raise DuplicateVerticle(spec.name)
            v = Verticle(self, spec)
            self._verticles[spec.name] = v
            self._route_cache.clear()
        if self.threaded:
            v._thread = threading.Thread(target=v._run, name=f"verticle-{spec.name}", daemon=True)
            v._thread.start()
        return v

    def undeploy(self, v: Verticle | str) -> None:
        v = self._verticles[v] if isinstance(v, str) else v
        with self._lock:
            if self._verticles.get(v.name) is not v:
                return
            del self._verticles[v.name]
            self._route_cache.clear()
            v.live = False
        v.mailbox.clear()
        v.mailbox.put(_STOP)
        if v.spec.on_stop is not None:
            v.spec.on_stop()

    def verticle(self, name: str) -> Verticle:
        return self._verticles[name]

    @property
    def verticles(self) -> list[Verticle]:
        return list(self._verticles.values())

    def _add_address(self, v: Verticle, address: str) -> None:
        with self._lock:
            if address not in v.addresses:
                v.addresses.append(address)
            self._route_cache.clear()

    def _remove_address(self, v: Verticle, address: str) -> None:
        with self._lock:
            if address in v.addresses:
                v.addresses.remove(address)
            self._route_cache.clear()

    def _targets(self, address: str) -> tuple[Verticle, ...]:
        hit = self._route_cache.get(address)
        if hit is None:
            hit = tuple(
                v
                for v in self._verticles.values()
                if any(a == address or ("*" in a and fnmatch.fnmatchcase(address, a)) for a in v.addresses)
            )
            self._route_cache[address] = hit
        return hit

    # -- bus ---------------------------------------------------------------

    def bus_publish(self, address: str, body: Any, headers: Mapping[str, str] | None = None) -> int:
        """Fan ``body`` out to every verticle subscribed to ``address``; returns its seq."""
        with self._lock:
            if not self._running:
                raise Shutdown("server is shut down")
            counter = self._seqs.get(address)
            if counter is None:
                counter = self._seqs[address] = itertools.count(1)
            seq = next(counter)
            event = BusEvent(address, body, self.clock(), seq, FrozenDict(headers or {}))
            self.published += 1
            for v in self._targets(address):
                v.mailbox.put(event)
        return seq

    # -- running -----------------------------------------------------------

    def run_until_idle(self, max_steps: int | None = None) -> int:
        """Inline mode: drain each mailbox in deploy order until all are empty. Returns items handled."""
        steps = 0
        progress = True
        while progress:
            progress = False
            for v in list(self._verticles.values()):
                while v.step():
                    steps += 1
                    progress = True
                    if max_steps is not None and steps >= max_steps:
                        return steps
        return steps

    def wait_idle(self, timeout: float = 10.0) -> bool:
        if not self.threaded:
            self.run_until_idle()
            return True
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if all(v.idle for v in list(self._verticles.values())):
                return True
            time.sleep(0.001)
        return False

    def shutdown(self) -> None:
        with self._lock:
            self._running = False
            names = list(self._verticles)
        for name in names:
            self.undeploy(name)

    def stats(self) -> dict[str, Any]:
        return {
            "system": self.system_id,
            "published": self.published,
            "verticles": [v.stats() for v in list(self._verticles.values())],
        }


# ---------------------------------------------------------------------------
# Ingestion


@dataclass(frozen=True)
class RawMessage:
    topic: str
    payload: bytes
    receipt_ts: Timestamp


class FeedHandler:
    """Ingestion verticle: broker messages in, decoded envelopes onto the bus.

    Every message ends up either as a feed event (``platform.feed`` plus
    ``sensor.<acp_id>``) or as a dead-letter record on the broker.
    """

    def __init__(
        self,
        rts: RealTimeServer,
        broker: Broker,
        decoders: DecoderManager,
        topic_filter: str = "#",
        name: str = "FeedHandler",
    ):
        self.rts = rts
        self.broker = broker
        self.decoders = decoders
        self.received = 0
        self.fed = 0
        self.deadletters = 0
        self.loops_dropped = 0
        self._seen_routed: OrderedDict[tuple[str, str, str], None] = OrderedDict()
        self.verticle = rts.deploy(VerticleSpec(name, VerticleClass.INGESTION, (), self._handle))
        self.subscription: Subscription = broker.subscribe(topic_filter, listener=self._on_message)

    def _on_message(self, topic: str, payload: bytes) -> None:
        if topic.startswith("platform/"):
            return
        self.received += 1
        self.verticle.inject(RawMessage(topic, payload, self.rts.clock()))

    def _handle(self, msg: RawMessage, ctx: VerticleContext) -> None:
        if msg.topic.split("/", 1)[0] == ROUTED_PREFIX:
            self._handle_routed(msg, ctx)
            return
        try:
            outcome = self.decoders.decode(msg.topic, msg.payload, msg.receipt_ts)
        except DecodeFailure as exc:
            self._deadletter(msg, str(exc))
            return
        env = outcome.envelope
        headers = {
            "receipt_ts": str(msg.receipt_ts),
            "ts_source": outcome.ts_source.value,
            "decoder": outcome.decoder,
            "route": self.rts.system_id,
        }
        if outcome.ts_rejected:
            headers["ts_rejected"] = "1"
        self._publish(env, headers, ctx)

    def _publish(self, env: Envelope, headers: dict[str, str], ctx: VerticleContext) -> None:
        self.fed += 1
        ctx.publish(FEED, env, headers)
        ctx.publish(SENSOR_PREFIX + env.acp_id, env, headers)

    def _handle_routed(self, msg: RawMessage, ctx: VerticleContext) -> None:
        try:
            obj = json.loads(msg.payload)
            route = [str(s) for s in obj["route"]]
            env = Envelope.from_json(obj["envelope"])
        except (ValueError, KeyError, TypeError) as exc:
            self._deadletter(msg, f"routed: {exc!r}")
            return
        key = (route[0], env.acp_id, str(env.acp_ts))
        if self.rts.system_id in route or key in self._seen_routed:
            self.loops_dropped += 1
            return
        self._seen_routed[key] = None
        if len(self._seen_routed) > 65536:
            self._seen_routed.popitem(last=False)
        headers = {"receipt_ts": str(msg.receipt_ts), "ts_source": "ROUTED", "decoder": "routed",
                   "route": ",".join([*route, self.rts.system_id])}
        self._publish(env, headers, ctx)

    def _deadletter(self, msg: RawMessage, error: str) -> None:
        self.deadletters += 1
        record = deadletter_record(msg.topic, msg.payload, error, msg.receipt_ts)
        try:
            self.broker.publish(DEADLETTER_TOPIC, json.dumps(record))
        except BrokerDown:
            log.warning("dead letter lost, broker down: %s", record)

    def close(self) -> None:
        self.subscription.unsubscribe()
        self.rts.undeploy(self.verticle)


def feed_handler(rts: RealTimeServer, broker: Broker, decoders: DecoderManager, topic_filter: str = "#") -> FeedHandler:
    return FeedHandler(rts, broker, decoders, topic_filter)


# ---------------------------------------------------------------------------
# Storage


def day_shard_path(data_dir: str, ts: Timestamp) -> str:
    d = ts.datetime()
    return os.path.join(data_dir, "data", f"{d.year:04d}", f"{d.month:02d}", f"{d.day:02d}.ndjson")


def sensor_shard_path(data_dir: str, acp_id: str, ts: Timestamp) -> str:
    d = ts.datetime()
    safe = acp_id.replace(os.sep, "_").replace("..", "_")
    return os.path.join(data_dir, "sensors", safe, f"{d.year:04d}-{d.month:02d}-{d.day:02d}.ndjson")


class MessageFiler:
    """Storage verticle writing each envelope to its UTC day shard and its sensor shard."""

    def __init__(self, rts: RealTimeServer, data_dir: str, address: str = FEED, name: str = "MessageFiler"):
        self.data_dir = data_dir
        self.written = 0
        self.errors = 0
        self.last_error: str | None = None
        self._handles: OrderedDict[str, Any] = OrderedDict()
        self.verticle = rts.deploy(
            VerticleSpec(name, VerticleClass.STORAGE, (address,), self._handle, on_stop=self.close)
        )

    def _open(self, path: str) -> Any:
        fh = self._handles.get(path)
        if fh is None:
            os.makedirs(os.path.dirname(path), exist_ok=True)
            fh = open(path, "a", encoding="utf-8")
            self._handles[path] = fh
            if len(self._handles) > 256:
                _, old = self._handles.popitem(last=False)
                old.close()
        else:
            self._handles.move_to_end(path)
        return fh

    def _handle(self, event: BusEvent, ctx: VerticleContext) -> None:
        env = event.body
        if not isinstance(env, Envelope):
            return
        line = env.dumps() + "\n"
        try:
            for path in (day_shard_path(self.data_dir, env.acp_ts), sensor_shard_path(self.data_dir, env.acp_id, env.acp_ts)):
                fh = self._open(path)
                fh.write(line)
                fh.flush()
            self.written += 1
        except OSError as exc:  # StorageFull and friends: report, never push back on the bus
            self.errors += 1
            self.last_error = str(exc)

    def close(self) -> None:
        for fh in self._handles.values():
            fh.close()
        self._handles.clear()

    def stats(self) -> dict[str, Any]:
        return {"written": self.written, "errors": self.errors, "last_error": self.last_error}


def message_filer(rts: RealTimeServer, data_dir: str) -> MessageFiler:
    return MessageFiler(rts, data_dir)


def read_shard(path: str) -> Iterator[Envelope]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield Envelope.loads(line)


def iter_day_shards(data_dir: str) -> Iterator[str]:
    root = os.path.join(data_dir, "data")
    if not os.path.isdir(root):
        return
    for dirpath, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            if f.endswith(".ndjson"):
                yield os.path.join(dirpath, f)


def iter_sensor_shards(data_dir: str, acp_id: str | None = None) -> Iterator[str]:
    root = os.path.join(data_dir, "sensors")
    if not os.path.isdir(root):
        return
    for sensor in sorted(os.listdir(root)) if acp_id is None else [acp_id]:
        sdir = os.path.join(root, sensor)
        if os.path.isdir(sdir):
            for f in sorted(os.listdir(sdir)):
                if f.endswith(".ndjson"):
                    yield os.path.join(sdir, f)


class LatestReadings:
    """Most recent envelope per sensor, kept current by a storage verticle."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._latest: dict[str, Envelope] = {}
        self.listeners: list[Callable[[Envelope], None]] = []
        self.verticle: Verticle | None = None

    def attach(self, rts: RealTimeServer, address: str = FEED, name: str = "LatestReadings") -> LatestReadings:
        self.verticle = rts.deploy(
            VerticleSpec(name, VerticleClass.STORAGE, (address,), lambda ev, ctx: self.update(ev.body))
        )
        return self

    def update(self, env: Any) -> bool:
        if not isinstance(env, Envelope):
            return False
        with self._lock:
            cur = self._latest.get(env.acp_id)
            if cur is not None and env.acp_ts < cur.acp_ts:
                return False
            self._latest[env.acp_id] = env
        for cb in list(self.listeners):
            cb(env)
        return True

    def get(self, acp_id: str) -> Envelope | None:
        return self._latest.get(acp_id)

    def all(self) -> dict[str, Envelope]:
        with self._lock:
            return dict(self._latest)

    @classmethod
    def from_shards(cls, data_dir: str) -> LatestReadings:
        out = cls()
        for path in iter_sensor_shards(data_dir):
            for env in read_shard(path):
                out.update(env)
        return out


# ---------------------------------------------------------------------------
# Outbound: RTMonitor


@dataclass(frozen=True)
class MonitorFilter:
    """Which events a client wants: an address plus optional envelope conditions."""

    address: str = FEED
    has_feature: str | None = None
    acp_id: str | None = None
    acp_type: str | None = None
    predicate: Callable[[Any], bool] | None = None

    def accepts(self, event: BusEvent) -> bool:
        if not (event.address == self.address or fnmatch.fnmatchcase(event.address, self.address)):
            return False
        body = event.body
        if isinstance(body, Envelope):
            if self.has_feature is not None and self.has_feature not in body.payload_cooked:
                return False
            if self.acp_id is not None and body.acp_id != self.acp_id:
                return False
            if self.acp_type is not None and body.acp_type != self.acp_type:
                return False
        elif self.has_feature or self.acp_id or self.acp_type:
            return False
        return self.predicate is None or bool(self.predicate(body))

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> MonitorFilter:
        return cls(obj.get("address", FEED), obj.get("has_feature"), obj.get("acp_id"), obj.get("acp_type"))


@dataclass(frozen=True)
class SubscriptionToken:
    token_id: str
    client_id: str
    filter: MonitorFilter


class MonitorClient:
    """Push stream for one client. Items are ``(token_id, BusEvent)``."""

    def __init__(self, client_id: str, depth: int = 4096):
        self.client_id = client_id
        self._items: deque[tuple[str, BusEvent]] = deque()
        self._depth = depth
        self._cond = threading.Condition()
        self._revoked: set[str] = set()
        self.dropped = 0
        self.on_event: Callable[[str, BusEvent], None] | None = None

    def _push(self, token_id: str, event: BusEvent) -> None:
        if self.on_event is not None:
            self.on_event(token_id, event)
            return
        with self._cond:
            if len(self._items) >= self._depth:
                self._items.popleft()
                self.dropped += 1
            self._items.append((token_id, event))
            self._cond.notify()

    def _revoke(self, token_id: str) -> None:
        with self._cond:
            self._revoked.add(token_id)
            self._items = deque(i for i in self._items if i[0] != token_id)

    def get(self, timeout: float | None = None) -> tuple[str, BusEvent] | None:
        with self._cond:
            while True:
                if not self._items:
                    if timeout == 0 or not self._cond.wait_for(lambda: bool(self._items), timeout):
                        return None
                item = self._items.popleft()
                if item[0] not in self._revoked:
                    return item

    def drain(self) -> list[tuple[str, BusEvent]]:
        with self._cond:
            items = [i for i in self._items if i[0] not in self._revoked]
            self._items.clear()
            return items


class RTMonitor:
    """Outbound verticle pushing filtered bus events to subscribed clients."""

    def __init__(self, rts: RealTimeServer, max_per_client: int = 64, name: str = "RTMonitor"):
        self.rts = rts
        self.max_per_client = max_per_client
        self._lock = threading.Lock()
        self._tokens: dict[str, SubscriptionToken] = {}
        self._clients: dict[str, MonitorClient] = {}
        self._ids = itertools.count(1)
        self.delivered = 0
        self.verticle = rts.deploy(VerticleSpec(name, VerticleClass.OUTBOUND, (), self._handle))

    def client(self, client_id: str) -> MonitorClient:
        with self._lock:
            c = self._clients.get(client_id)
            if c is None:
                c = self._clients[client_id] = MonitorClient(client_id)
            return c

    def subscribe(self, client_id: str, flt: MonitorFilter) -> SubscriptionToken:
        client = self.client(client_id)
        with self._lock:
            if sum(1 for t in self._tokens.values() if t.client_id == client_id) >= self.max_per_client:
                raise TooManySubscriptions(client_id)
            token = SubscriptionToken(f"tok-{next(self._ids)}", client.client_id, flt)
            self._tokens[token.token_id] = token
        self.rts._add_address(self.verticle, flt.address)
        return token

    def revoke(self, token: SubscriptionToken | str) -> None:
        token_id = token if isinstance(token, str) else token.token_id
        with self._lock:
            tok = self._tokens.pop(token_id, None)
            if tok is None:
                return
            client = self._clients[tok.client_id]
            still_used = any(t.filter.address == tok.filter.address for t in self._tokens.values())
        client._revoke(token_id)
        if not still_used:
            self.rts._remove_address(self.verticle, tok.filter.address)

    def _handle(self, event: BusEvent, ctx: VerticleContext) -> None:
        with self._lock:
            targets = [(t, self._clients[t.client_id]) for t in self._tokens.values() if t.filter.accepts(event)]
            # delivered under the lock so a revoke cannot race a push
            for tok, client in targets:
                client._push(tok.token_id, event)
                self.delivered += 1


def rtmonitor_subscribe(monitor: RTMonitor, client_id: str, flt: MonitorFilter) -> SubscriptionToken:
    return monitor.subscribe(client_id, flt)


# ---------------------------------------------------------------------------
# Outbound: MessageRouter


class MessageRouter:
    """Outbound verticle copying bus events to peer systems' brokers.

    Envelopes are published on ``routed/<system>/<address>`` with the list of
    systems already visited; peers in that list are skipped. A peer that is
    down gets a bounded buffer, and overflow is counted as dropped.
    """

    def __init__(
        self,
        rts: RealTimeServer,
        peers: Mapping[str, Broker],
        patterns: Sequence[str] = (FEED,),
        buffer: int = 1024,
        name: str = "MessageRouter",
    ):
        self.rts = rts
        self.peers = dict(peers)
        self.buffer_size = buffer
        self._buffers: dict[str, deque[tuple[str, bytes]]] = {p: deque() for p in self.peers}
        self.routed = 0
        self.dropped = 0
        self.verticle = rts.deploy(VerticleSpec(name, VerticleClass.OUTBOUND, tuple(patterns), self._handle))

    def _handle(self, event: BusEvent, ctx: VerticleContext) -> None:
        env = event.body
        if not isinstance(env, Envelope):
            return
        route = [s for s in event.headers.get("route", self.rts.system_id).split(",") if s]
        if not route or route[-1] != self.rts.system_id:
            route.append(self.rts.system_id)
        payload = json.dumps({"route": route, "address": event.address, "envelope": env.to_json()}).encode()
        topic = f"{ROUTED_PREFIX}/{route[0]}/{event.address}"
        for peer_id, broker in self.peers.items():
            if peer_id in route:
                continue
            self._send(peer_id, broker, topic, payload)

    def _send(self, peer_id: str, broker: Broker, topic: str, payload: bytes) -> None:
        buf = self._buffers[peer_id]
        if broker.alive:
            while buf:
                t, p = buf.popleft()
                broker.publish(t, p)
                self.routed += 1
            try:
                broker.publish(topic, payload)
                self.routed += 1
                return
            except BrokerDown:
                pass
        if len(buf) >= self.buffer_size:
            buf.popleft()
            self.dropped += 1
        buf.append((topic, payload))

    def stats(self) -> dict[str, Any]:
        return {"routed": self.routed, "dropped": self.dropped,
                "buffered": {p: len(b) for p, b in self._buffers.items()}}


def message_router(rts: RealTimeServer, peers: Mapping[str, Broker], patterns: Sequence[str] = (FEED,)) -> MessageRouter:
    return MessageRouter(rts, peers, patterns)
