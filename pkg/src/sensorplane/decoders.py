"""Decoder manager: turns raw broker messages into Envelopes.

Decoders only ever add information. The raw body is kept verbatim in
``payload_original`` (binary bodies as base64 under ``raw_b64``) and the
standardised features go to ``payload_cooked``.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping

from .core import FEATURES, Envelope, MalformedTimestamp, PlatformError, Timestamp, location_from_json
from .pubsub import literal_segments, topic_matches, validate_filter

DEADLETTER_TOPIC = "platform/deadletter"
MAX_SENSOR_AGE_S = 24 * 3600
MAX_SENSOR_LEAD_S = 60


class DuplicateName(PlatformError, ValueError):
    pass


class DecodeFailure(PlatformError, ValueError):
    pass


class TsSource(str, Enum):
    SENSOR = "SENSOR"
    PLATFORM = "PLATFORM"


@dataclass(frozen=True)
class Decoded:
    """What a decoder's transform returns."""

    acp_id: str
    acp_type: str
    cooked: Mapping[str, float] = field(default_factory=dict)
    sensor_ts: Timestamp | None = None
    acp_event: str | None = None
    acp_event_value: str | None = None
    acp_confidence: float | None = None
    acp_location: Any = None


Transform = Callable[[str, Mapping[str, Any]], Decoded]
Predicate = Callable[[str, Mapping[str, Any]], bool]


@dataclass(frozen=True)
class DecoderSpec:
    name: str
    topic_filter: str
    transform: Transform
    match: Predicate | None = None

    def __post_init__(self) -> None:
        validate_filter(self.topic_filter)

    @property
    def specificity(self) -> int:
        return literal_segments(self.topic_filter)

    def accepts(self, topic: str, body: Mapping[str, Any]) -> bool:
        if not topic_matches(self.topic_filter, topic):
            return False
        return self.match is None or bool(self.match(topic, body))


@dataclass(frozen=True)
class DecodeOutcome:
    envelope: Envelope
    ts_source: TsSource
    decoder: str
    receipt_ts: Timestamp
    ts_rejected: bool = False


def parse_raw(raw: bytes | str) -> dict[str, Any]:
    """Best-effort parse of a message body into a JSON object.

    JSON objects are returned as-is, other JSON values are wrapped under
    ``value`` and anything else is kept as base64 under ``raw_b64``.
    """
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    if not isinstance(raw, (bytes, bytearray, memoryview)):
        raise DecodeFailure(f"raw payload is not bytes: {type(raw).__name__}")
    raw = bytes(raw)
    try:
        value = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        return {"raw_b64": base64.b64encode(raw).decode("ascii")}
    if isinstance(value, dict):
        return value
    return {"value": value}


def raw_from_original(original: Mapping[str, Any]) -> bytes:
    """Inverse of :func:`parse_raw` up to JSON formatting."""
    if set(original) == {"raw_b64"}:
        return base64.b64decode(original["raw_b64"])
    if set(original) == {"value"}:
        return json.dumps(original["value"]).encode("utf-8")
    return json.dumps(_plain(original), ensure_ascii=False).encode("utf-8")


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def cook(values: Mapping[str, Any]) -> dict[str, float]:
    """Keep only registry features with numeric values."""
    out: dict[str, float] = {}
    for k, v in values.items():
        if k in FEATURES and isinstance(v, (int, float)) and not isinstance(v, bool):
            out[k] = v
    return out


def _sensor_ts(body: Mapping[str, Any]) -> Timestamp | None:
    ts = body.get("ts", body.get("acp_ts"))
    if ts is None:
        return None
    try:
        return Timestamp.parse(ts)
    except MalformedTimestamp:
        return None


def _event_fields(body: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if isinstance(body.get("event"), str):
        out["acp_event"] = body["event"]
        if body.get("event_value") is not None:
            out["acp_event_value"] = str(body["event_value"])
    return out


# -- shipped decoders ---------------------------------------------------------


def _smartplug(topic: str, body: Mapping[str, Any]) -> Decoded:
    # csn/<device>/tele/SENSOR : the device id only appears in the topic
    device = topic.split("/")[1]
    energy = body.get("ENERGY")
    if not isinstance(energy, Mapping) or "Power" not in energy:
        raise DecodeFailure("smartplug message without ENERGY.Power")
    return Decoded(
        acp_id=device,
        acp_type="smartplug",
        cooked={"power": energy["Power"]},
        sensor_ts=_sensor_ts(body),
        **_event_fields(body),
    )


def _elsys_co2(topic: str, body: Mapping[str, Any]) -> Decoded:
    dev_id = body.get("dev_id") or body.get("acp_id")
    if not isinstance(dev_id, str):
        raise DecodeFailure("LoRa message without dev_id")
    fields = body.get("payload_fields", body)
    if not isinstance(fields, Mapping):
        raise DecodeFailure("payload_fields is not an object")
    return Decoded(acp_id=dev_id, acp_type="elsys-co2", cooked=cook(fields), sensor_ts=_sensor_ts(body))


def _coffee_node(topic: str, body: Mapping[str, Any]) -> Decoded:
    acp_id = body.get("acp_id")
    if not isinstance(acp_id, str):
        raise DecodeFailure("coffee node message without acp_id")
    try:
        weight = float(body["weight"])
        power = float(body.get("grinder_power", 0.0)) + float(body.get("brewer_power", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeFailure(f"coffee node message: {exc}") from None
    return Decoded(
        acp_id=acp_id,
        acp_type="coffee-node",
        cooked={"weight": weight, "power": power},
        sensor_ts=_sensor_ts(body),
        **_event_fields(body),
    )


def _passthrough(topic: str, body: Mapping[str, Any]) -> Decoded:
    acp_id = body.get("acp_id")
    if not isinstance(acp_id, str):
        acp_id = topic.replace("/", "-")
    acp_type = body.get("acp_type") if isinstance(body.get("acp_type"), str) else "unknown"
    loc = None
    if isinstance(body.get("acp_location"), Mapping):
        try:
            loc = location_from_json(body["acp_location"])
        except ValueError:
            loc = None
    return Decoded(acp_id=acp_id, acp_type=acp_type, cooked=cook(body), sensor_ts=_sensor_ts(body),
                   acp_location=loc, **_event_fields(body))


SMARTPLUG = DecoderSpec("smartplug", "csn/+/tele/SENSOR", _smartplug)
ELSYS_CO2 = DecoderSpec(
    "elsys-co2", "ttn/#", _elsys_co2,
    match=lambda topic, body: str(body.get("dev_id", "")).startswith("elsys-co2"),
)
COFFEE_NODE = DecoderSpec("coffee-node", "coffee/+", _coffee_node)
PASSTHROUGH = DecoderSpec("passthrough", "#", _passthrough)


class DecoderManager:
    """Holds the registered decoders and picks one per message.

    The decoder tuple is replaced wholesale on registration, so :meth:`decode`
    reads it without locking and may run on any number of threads.
    """

    def __init__(self, decoders: list[DecoderSpec] | None = None, with_builtins: bool = True):
        self._lock = threading.Lock()
        self._decoders: tuple[DecoderSpec, ...] = ()
        self._counts: dict[str, int] = {}
        if with_builtins:
            for spec in (SMARTPLUG, ELSYS_CO2, COFFEE_NODE):
                self.register(spec)
        for spec in decoders or []:
            self.register(spec)

    def register(self, spec: DecoderSpec) -> None:
        with self._lock:
            if spec.name == PASSTHROUGH.name or any(d.name == spec.name for d in self._decoders):
                raise DuplicateName(spec.name)
            self._decoders = (*self._decoders, spec)
            self._counts[spec.name] = 0

    @property
    def decoders(self) -> tuple[DecoderSpec, ...]:
        return self._decoders

    def select(self, topic: str, body: Mapping[str, Any]) -> DecoderSpec:
        """Most literal topic segments wins, then earliest registration."""
        best: DecoderSpec | None = None
        for spec in self._decoders:
            if spec.accepts(topic, body) and (best is None or spec.specificity > best.specificity):
                best = spec
        return best or PASSTHROUGH

    def decode(self, topic: str, raw: bytes | str, receipt_ts: Timestamp) -> DecodeOutcome:
        body = parse_raw(raw)
        spec = self.select(topic, body)
        try:
            d = spec.transform(topic, body)
        except DecodeFailure:
            raise
        except (KeyError, TypeError, ValueError, AttributeError, IndexError) as exc:
            raise DecodeFailure(f"{spec.name}: {exc!r}") from None
        with self._lock:
            self._counts[spec.name] = self._counts.get(spec.name, 0) + 1

        ts, source, rejected = receipt_ts, TsSource.PLATFORM, False
        if d.sensor_ts is not None:
            lag = receipt_ts.value - d.sensor_ts.value
            if -MAX_SENSOR_LEAD_S <= lag <= MAX_SENSOR_AGE_S:
                ts, source = d.sensor_ts, TsSource.SENSOR
            else:
                rejected = True
        try:
            env = Envelope(
                acp_id=d.acp_id,
                acp_ts=ts,
                acp_type=d.acp_type,
                payload_original=body,
                payload_cooked=cook(d.cooked),
                acp_event=d.acp_event,
                acp_event_value=d.acp_event_value,
                acp_confidence=d.acp_confidence,
                acp_location=d.acp_location,
            )
        except ValueError as exc:
            raise DecodeFailure(f"{spec.name}: {exc}") from None
        return DecodeOutcome(env, source, spec.name, receipt_ts, rejected)

    def stats(self) -> list[dict[str, Any]]:
        with self._lock:
            rows = [
                {"name": d.name, "filter": d.topic_filter, "matched": self._counts.get(d.name, 0)}
                for d in self._decoders
            ]
            rows.append({"name": PASSTHROUGH.name, "filter": PASSTHROUGH.topic_filter,
                         "matched": self._counts.get(PASSTHROUGH.name, 0)})
        return rows


def deadletter_record(topic: str, raw: bytes | str, error: str, receipt_ts: Timestamp) -> dict[str, str]:
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    try:
        b64 = base64.b64encode(bytes(raw)).decode("ascii")
    except (TypeError, binascii.Error):
        b64 = ""
    return {"topic": topic, "raw": b64, "error": error, "receipt_ts": str(receipt_ts)}
