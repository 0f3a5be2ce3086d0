"""In-process MQTT-style broker with wildcard filters and broker bridging.

Topic grammar follows MQTT 3.1.1: ``+`` matches one level, ``#`` matches the
remaining levels and may only appear last. Delivery is QoS-0-equivalent and
there are no retained messages.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence

from .core import PlatformError

log = logging.getLogger(__name__)

DEFAULT_QUEUE_DEPTH = 1024
SEEN_CACHE = 65536


class InvalidTopic(PlatformError, ValueError):
    pass


class InvalidFilter(PlatformError, ValueError):
    pass


class DuplicateBridge(PlatformError, ValueError):
    pass


class BrokerDown(PlatformError, RuntimeError):
    pass


def validate_topic(topic: str) -> list[str]:
    segs = topic.split("/")
    if not topic or any(s == "" for s in segs):
        raise InvalidTopic(f"empty topic segment in {topic!r}")
    if any("+" in s or "#" in s for s in segs):
        raise InvalidTopic(f"wildcards not allowed in publish topic {topic!r}")
    return segs


def validate_filter(flt: str) -> list[str]:
    segs = flt.split("/")
    if not flt or any(s == "" for s in segs):
        raise InvalidFilter(f"empty filter segment in {flt!r}")
    for i, s in enumerate(segs):
        if s == "#":
            if i != len(segs) - 1:
                raise InvalidFilter(f"'#' must be the last segment in {flt!r}")
        elif s != "+" and ("+" in s or "#" in s):
            raise InvalidFilter(f"wildcard mixed into segment {s!r} of {flt!r}")
    return segs


def topic_matches(flt: str | Sequence[str], topic: str | Sequence[str]) -> bool:
    f = flt.split("/") if isinstance(flt, str) else flt
    t = topic.split("/") if isinstance(topic, str) else topic
    for i, seg in enumerate(f):
        if seg == "#":
            return True
        if i >= len(t):
            return False
        if seg != "+" and seg != t[i]:
            return False
    return len(f) == len(t)


def literal_segments(flt: str) -> int:
    return sum(1 for s in flt.split("/") if s not in ("+", "#"))


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    msg_id: tuple[str, int]
    path: tuple[str, ...]


class Subscription:
    """Handle for one filter on one broker.

    Messages are either pushed to ``listener`` (which must not block) or
    queued in a bounded buffer that drops the oldest entry on overflow.
    """

    def __init__(
        self,
        broker: Broker,
        flt: str,
        sub_id: int,
        depth: int = DEFAULT_QUEUE_DEPTH,
        listener: Callable[[str, bytes], None] | None = None,
    ):
        self.broker = broker
        self.filter = flt
        self.id = sub_id
        self._segs = validate_filter(flt)
        self._listener = listener
        self._queue: deque[tuple[str, bytes]] = deque()
        self._depth = depth
        self._cond = threading.Condition()
        self.delivered = 0
        self.dropped = 0
        self.active = True

    def matches(self, topic_segs: Sequence[str]) -> bool:
        return topic_matches(self._segs, topic_segs)

    def _deliver(self, topic: str, payload: bytes) -> None:
        self.delivered += 1
        if self._listener is not None:
            self._listener(topic, payload)
            return
        with self._cond:
            if len(self._queue) >= self._depth:
                self._queue.popleft()
                self.dropped += 1
            self._queue.append((topic, payload))
            self._cond.notify()

    def get(self, timeout: float | None = None) -> tuple[str, bytes] | None:
        with self._cond:
            if not self._queue and timeout != 0:
                self._cond.wait_for(lambda: self._queue or not self.active, timeout)
            return self._queue.popleft() if self._queue else None

    def drain(self) -> list[tuple[str, bytes]]:
        with self._cond:
            items = list(self._queue)
            self._queue.clear()
            return items

    def __iter__(self) -> Iterator[tuple[str, bytes]]:
        while self.active or self._queue:
            item = self.get(timeout=0.1)
            if item is not None:
                yield item

    def unsubscribe(self) -> None:
        self.broker.unsubscribe(self)


@dataclass(frozen=True)
class BridgeConfig:
    remote: str
    filters: tuple[str, ...] = ("#",)
    direction: str = "both"

    def __post_init__(self) -> None:
        if self.direction not in ("in", "out", "both"):
            raise ValueError(f"bridge direction must be in|out|both, got {self.direction!r}")
        object.__setattr__(self, "filters", tuple(self.filters))
        for f in self.filters:
            validate_filter(f)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> BridgeConfig:
        return cls(obj["remote"], tuple(obj.get("filters", ["#"])), obj.get("direction", "both"))


@dataclass
class _Link:
    """One direction of a bridge: forward matching traffic from src to dst."""

    src: Broker
    dst: Broker
    filters: tuple[tuple[str, ...], ...]
    forwarded: int = 0

    def wants(self, topic_segs: Sequence[str]) -> bool:
        return any(topic_matches(f, topic_segs) for f in self.filters)


@dataclass
class Bridge:
    local: Broker
    remote: Broker
    config: BridgeConfig
    links: list[_Link] = field(default_factory=list)

    def close(self) -> None:
        for link in self.links:
            link.src._remove_link(link)
        self.local._bridges.discard(self._key())

    def _key(self) -> tuple[str, str, tuple[str, ...]]:
        return (self.local.id, self.remote.id, self.config.filters)


class ClientSession:
    """A connected client; holds an optional last-will fired on ``drop``."""

    def __init__(self, broker: Broker, client_id: str, will: tuple[str, bytes] | None, keep_alive: float):
        self.broker = broker
        self.client_id = client_id
        self.will = will
        self.keep_alive = keep_alive  # no effect in-process
        self.subscriptions: list[Subscription] = []
        self.connected = True

    def subscribe(self, flt: str, **kwargs: Any) -> Subscription:
        sub = self.broker.subscribe(flt, **kwargs)
        self.subscriptions.append(sub)
        return sub

    def publish(self, topic: str, payload: bytes | str) -> int:
        return self.broker.publish(topic, payload)

    def disconnect(self) -> None:
        self._close()

    def drop(self) -> None:
        """Unclean disconnect: publish the last will, if any."""
        will = self.will
        self._close()
        if will is not None:
            self.broker.publish(*will)

    def _close(self) -> None:
        if not self.connected:
            return
        self.connected = False
        for sub in self.subscriptions:
            sub.unsubscribe()
        self.subscriptions.clear()
        self.broker._clients.pop(self.client_id, None)


class Broker:
    """A single logical broker.

    Local delivery for one publish happens under the broker lock, which gives
    every subscriber the messages of a topic in publish order. Forwarding over
    bridges happens after the lock is released so that bridged brokers never
    hold each other's locks. Each message carries an id and the list of brokers
    it has visited; a broker delivers a given id at most once.
    """

    def __init__(self, broker_id: str, queue_depth: int = DEFAULT_QUEUE_DEPTH):
        self.id = broker_id
        self.queue_depth = queue_depth
        self.alive = True
        self._lock = threading.RLock()
        self._subs: list[Subscription] = []
        self._sub_ids = itertools.count(1)
        self._msg_ids = itertools.count(1)
        self._links: list[_Link] = []
        self._bridges: set[tuple[str, str, tuple[str, ...]]] = set()
        self._seen: OrderedDict[tuple[str, int], None] = OrderedDict()
        self._clients: dict[str, ClientSession] = {}
        self.published = 0
        self.received_bridged = 0
        self.duplicates_suppressed = 0

    def __repr__(self) -> str:
        return f"Broker({self.id!r})"

    # -- client API ---------------------------------------------------------

    def connect(
        self, client_id: str, will_topic: str | None = None, will_payload: bytes | str = b"", keep_alive: float = 60.0
    ) -> ClientSession:
        will = None
        if will_topic is not None:
            validate_topic(will_topic)
            will = (will_topic, _as_bytes(will_payload))
        with self._lock:
            old = self._clients.get(client_id)
        if old is not None:
            old.disconnect()
        session = ClientSession(self, client_id, will, keep_alive)
        with self._lock:
            self._clients[client_id] = session
        return session

    def subscribe(
        self,
        flt: str,
        listener: Callable[[str, bytes], None] | None = None,
        depth: int | None = None,
    ) -> Subscription:
        sub = Subscription(self, flt, next(self._sub_ids), depth or self.queue_depth, listener)
        with self._lock:
            self._subs = [*self._subs, sub]
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs = [s for s in self._subs if s is not sub]
        with sub._cond:
            sub.active = False
            sub._cond.notify_all()

    def publish(self, topic: str, payload: bytes | str, origin: str | None = None) -> int:
        """Publish locally; returns the number of local deliveries.

        ``origin`` names the broker a message arrived from, so bridges never
        send it straight back there.
        """
        segs = validate_topic(topic)
        if not self.alive:
            raise BrokerDown(self.id)
        msg_id = (self.id, next(self._msg_ids))
        path = (origin, self.id) if origin else (self.id,)
        msg = Message(topic, _as_bytes(payload), msg_id, path)
        with self._lock:
            self.published += 1
        return self._route(msg, segs)

    # -- internals ----------------------------------------------------------

    def _receive_bridged(self, msg: Message) -> int:
        if not self.alive:
            return 0
        return self._route(Message(msg.topic, msg.payload, msg.msg_id, (*msg.path, self.id)), msg.topic.split("/"))

    def _route(self, msg: Message, segs: list[str]) -> int:
        with self._lock:
            if msg.msg_id in self._seen:
                self.duplicates_suppressed += 1
                return 0
            self._seen[msg.msg_id] = None
            if len(self._seen) > SEEN_CACHE:
                self._seen.popitem(last=False)
            if len(msg.path) > 1:
                self.received_bridged += 1
            count = 0
            for sub in self._subs:
                if sub.matches(segs):
                    sub._deliver(msg.topic, msg.payload)
                    count += 1
            links = [ln for ln in self._links if ln.dst.id not in msg.path and ln.wants(segs)]
        for link in links:
            link.forwarded += 1
            link.dst._receive_bridged(msg)
        return count

    def _add_link(self, link: _Link) -> None:
        with self._lock:
            self._links = [*self._links, link]

    def _remove_link(self, link: _Link) -> None:
        with self._lock:
            self._links = [ln for ln in self._links if ln is not link]

    def stats(self) -> dict[str, Any]:
        with self._lock:
            return {
                "broker": self.id,
                "published": self.published,
                "received_bridged": self.received_bridged,
                "duplicates_suppressed": self.duplicates_suppressed,
                "subscriptions": [
                    {"id": s.id, "filter": s.filter, "delivered": s.delivered, "dropped": s.dropped}
                    for s in self._subs
                ],
                "links": [
                    {"to": ln.dst.id, "filters": ["/".join(f) for f in ln.filters], "forwarded": ln.forwarded}
                    for ln in self._links
                ],
            }


def bridge(local: Broker, remote: Broker, config: BridgeConfig) -> Bridge:
    """Connect two brokers. ``out`` forwards local to remote, ``in`` the reverse."""
    if not (local.alive and remote.alive):
        raise BrokerDown(f"{local.id} or {remote.id} is down")
    key = (local.id, remote.id, config.filters)
    with local._lock:
        if key in local._bridges:
            raise DuplicateBridge(f"{local.id}->{remote.id} {list(config.filters)}")
        local._bridges.add(key)
    filters = tuple(tuple(f.split("/")) for f in config.filters)
    br = Bridge(local, remote, config)
    if config.direction in ("out", "both"):
        br.links.append(_Link(local, remote, filters))
    if config.direction in ("in", "both"):
        br.links.append(_Link(remote, local, filters))
    for link in br.links:
        link.src._add_link(link)
    return br


def load_bridges(path: str, local: Broker, brokers: Mapping[str, Broker]) -> list[Bridge]:
    """Read a bridge file (JSON array of ``{remote, filters, direction}``)."""
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    return [bridge(local, brokers[e["remote"]], BridgeConfig.from_json(e)) for e in entries]


def _as_bytes(payload: bytes | str) -> bytes:
    return payload.encode("utf-8") if isinstance(payload, str) else bytes(payload)
