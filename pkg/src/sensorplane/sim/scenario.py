"""Scenario runner: a simulated sensor fleet pushed through a live pipeline.

Each message is stamped at five points: emission at the sensor, arrival at the
gateway (after the injected network hop), receipt by the platform from the
broker, publication on the event bus, and delivery to a monitoring client.

``clock: virtual`` (the default) runs as fast as possible on simulated time
and is fully deterministic for a given seed; platform hops then take the
values of their latency models (zero unless configured). ``clock: wall``
publishes in real time and measures the platform hops.
"""

from __future__ import annotations

import heapq
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from ..core import Envelope, Timestamp
from ..core import PlatformError
from ..decoders import DecoderManager
from ..pubsub import Broker
from ..rts import FEED, BusEvent, FeedHandler, MessageFiler, MonitorFilter, RealTimeServer, RTMonitor
from .coffee import Action, CoffeeConfig, CoffeeState, brew_day, coffee_step, render_script
from .latency import ZERO, LatencyModel
from .smart import SmartPolicy, smart_filter, step_day

DEFAULT_START = 1_600_000_000
NS = 1_000_000_000
HOPS = ("gateway", "broker", "bus", "client")


class ConfigError(PlatformError, ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass(frozen=True)
class SimMessage:
    seq: int
    acp_id: str
    topic: str
    t_emit_ns: int
    body: Mapping[str, Any]
    latency: str


@dataclass
class ScenarioResult:
    trace: list[dict[str, Any]] = field(default_factory=list)
    ground_truth: list[dict[str, Any]] = field(default_factory=list)
    node_events: list[dict[str, Any]] = field(default_factory=list)
    emitted: int = 0
    dropped: int = 0
    delivered: int = 0
    fed: int = 0
    stored: int = 0
    deadletters: int = 0

    def trace_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)

    def truth_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.ground_truth)


def _ts(ns: int) -> str:
    return str(Timestamp.from_ns(ns, digits=6))


# -- config -----------------------------------------------------------------------


def _need(obj: Mapping[str, Any], key: str, path: str, kind: type | tuple[type, ...]) -> Any:
    if key not in obj:
        raise ConfigError(f"{path}.{key}", "missing")
    v = obj[key]
    if not isinstance(v, kind) or isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def load_config(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(path, str(exc)) from None
    except ValueError as exc:
        raise ConfigError(path, f"invalid JSON: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: Any) -> None:
    if not isinstance(cfg, Mapping):
        raise ConfigError("$", "config must be an object")
    _need(cfg, "duration", "$", (int, float))
    if cfg["duration"] <= 0:
        raise ConfigError("$.duration", "must be positive")
    if cfg.get("clock", "virtual") not in ("virtual", "wall"):
        raise ConfigError("$.clock", "must be 'virtual' or 'wall'")
    models = cfg.get("latency_models", {})
    if not isinstance(models, Mapping):
        raise ConfigError("$.latency_models", "must be an object")
    for name, m in models.items():
        try:
            LatencyModel.from_json(m)
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError(f"$.latency_models.{name}", str(exc)) from None
    sensors = _need(cfg, "sensors", "$", list)
    for i, s in enumerate(sensors):
        p = f"$.sensors[{i}]"
        if not isinstance(s, Mapping):
            raise ConfigError(p, "must be an object")
        kind = s.get("kind", "periodic")
        if kind not in ("periodic", "smart", "coffee"):
            raise ConfigError(f"{p}.kind", f"unknown sensor kind {kind!r}")
        lat = s.get("latency")
        if lat is not None and lat not in models:
            raise ConfigError(f"{p}.latency", f"no latency model named {lat!r}")
        if kind == "periodic":
            if _need(s, "interval", p, (int, float)) <= 0:
                raise ConfigError(f"{p}.interval", "must be positive")
    for i, a in enumerate(cfg.get("script", [])):
        try:
            Action.from_json(a)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"$.script[{i}]", f"bad action: {exc}") from None


# -- message generation ------------------------------------------------------------


def _ids(s: Mapping[str, Any], default_prefix: str) -> list[str]:
    if "acp_id" in s:
        return [str(s["acp_id"])]
    prefix = str(s.get("prefix", default_prefix))
    count = int(s.get("count", 1))
    width = len(str(count - 1))
    return [f"{prefix}{i:0{width}d}" for i in range(count)]


def _periodic(s: Mapping[str, Any], seed: int, start_ns: int, duration_ns: int, out: list[tuple]) -> None:
    interval_ns = round(float(s["interval"]) * NS)
    feature = str(s.get("feature", "co2"))
    acp_type = str(s.get("acp_type", f"sim-{feature}"))
    model = s.get("model", {})
    mean, sigma = float(model.get("mean", 450.0)), float(model.get("sigma", 10.0))
    series = model.get("series")
    for acp_id in _ids(s, f"sim-{feature}-"):
        rng = random.Random(f"{seed}:{acp_id}")
        t = rng.randrange(0, interval_ns // 1_000_000) * 1_000_000 if s.get("stagger", True) else 0
        k = 0
        while t < duration_ns:
            value = float(series[k % len(series)]) if series else round(rng.gauss(mean, sigma), 3)
            body = {"acp_id": acp_id, "acp_type": acp_type, feature: value}
            out.append((start_ns + t, acp_id, f"sim/{acp_id}", body, s.get("latency")))
            t += interval_ns
            k += 1


def _smart(s: Mapping[str, Any], seed: int, start_ns: int, duration_ns: int, out: list[tuple],
           truth: list[dict[str, Any]]) -> None:
    feature = str(s.get("feature", "temperature"))
    policy = SmartPolicy(float(s.get("deadband", 1.0)), float(s.get("heartbeat", 3600.0)))
    for acp_id in _ids(s, f"sim-smart-{feature}-"):
        day = step_day(duration_ns // NS, int(s.get("steps", 10)), float(s.get("base", 20.0)),
                       float(s.get("noise", 0.05)), seed=random.Random(f"{seed}:{acp_id}").randrange(2**32))
        for t in day.steps:
            truth.append({"acp_id": acp_id, "t": _ts(start_ns + int(t * NS)), "event": f"{feature}_STEP"})
        for em in smart_filter(day.samples, policy):
            body: dict[str, Any] = {"acp_id": acp_id, "acp_type": "sim-smart", feature: round(em.value, 4)}
            if em.reason in ("change", "alert"):
                body["event"] = f"{feature}_STEP"
            out.append((start_ns + int(em.t * NS), acp_id, f"sim/{acp_id}", body, s.get("latency")))


def _coffee(s: Mapping[str, Any], cfg: Mapping[str, Any], seed: int, start_ns: int, duration_ns: int,
            out: list[tuple], truth: list[dict[str, Any]], node_events: list[dict[str, Any]]) -> None:
    acp_id = str(s.get("acp_id", "coffee-pot"))
    if cfg.get("script"):
        actions = [Action.from_json(a) for a in cfg["script"]]
    else:
        actions = brew_day(duration_ns / NS / 3600.0, seed=seed)
    ccfg = CoffeeConfig.from_json(s.get("thresholds", {}))
    rendered = render_script(actions, duration_ns / NS, float(s.get("interval", 5.0)),
                             float(s.get("noise_sigma", 0.0)), seed, ccfg)
    for ev in rendered.truth:
        truth.append({"acp_id": acp_id, "t": _ts(start_ns + int(ev.t * NS)), "event": ev.event})
    heartbeat = float(s.get("heartbeat", 300.0))
    state: CoffeeState | None = None
    last_sent = -1e18
    for t, inp in rendered.samples:
        reading = {"acp_id": acp_id, "weight": round(inp.weight, 4), "grinder_power": inp.grinder_w,
                   "brewer_power": inp.brewer_w}
        if state is None:
            state = CoffeeState.from_reading(inp, ccfg)
            events = []
        else:
            state, events = coffee_step(state, inp, t, ccfg)
        t_ns = start_ns + int(t * NS)
        for ev in events:
            node_events.append({"acp_id": acp_id, "t": _ts(t_ns), "event": ev.event})
            out.append((t_ns, acp_id, f"coffee/{acp_id}", {**reading, "event": ev.event,
                                                            "event_value": round(ev.weight, 4)}, s.get("latency")))
        if not events and t - last_sent >= heartbeat:
            out.append((t_ns, acp_id, f"coffee/{acp_id}", reading, s.get("latency")))
        if events or t - last_sent >= heartbeat:
            last_sent = t


def generate(cfg: Mapping[str, Any], seed: int) -> tuple[list[SimMessage], list[dict[str, Any]], list[dict[str, Any]]]:
    start_ns = int(cfg.get("start", DEFAULT_START)) * NS
    duration_ns = round(float(cfg["duration"]) * NS)
    raw: list[tuple] = []
    truth: list[dict[str, Any]] = []
    node_events: list[dict[str, Any]] = []
    for s in cfg["sensors"]:
        kind = s.get("kind", "periodic")
        if kind == "periodic":
            _periodic(s, seed, start_ns, duration_ns, raw)
        elif kind == "smart":
            _smart(s, seed, start_ns, duration_ns, raw, truth)
        else:
            _coffee(s, cfg, seed, start_ns, duration_ns, raw, truth, node_events)
    raw.sort(key=lambda r: (r[0], r[1]))
    msgs = [SimMessage(i, acp_id, topic, t, body, lat or "") for i, (t, acp_id, topic, body, lat) in enumerate(raw)]
    truth.sort(key=lambda r: (Timestamp.parse(r["t"]).value, r["acp_id"]))
    return msgs, truth, node_events


# -- running ----------------------------------------------------------------------


class _Pipeline:
    def __init__(self, threaded: bool, clock: Callable[[], Timestamp], data_dir: str | None):
        self.broker = Broker("sim")
        self.rts = RealTimeServer(threaded=threaded, clock=clock, system_id="sim")
        self.feed = FeedHandler(self.rts, self.broker, DecoderManager())
        self.filer = MessageFiler(self.rts, data_dir) if data_dir else None
        self.monitor = RTMonitor(self.rts)
        self.client = self.monitor.client("scenario")
        self.monitor.subscribe("scenario", MonitorFilter(address=FEED))

    def close(self) -> None:
        self.rts.wait_idle(30.0)
        if self.filer is not None:
            self.filer.close()
        self.rts.shutdown()


def _msg_id(event: BusEvent) -> int | None:
    env = event.body
    if isinstance(env, Envelope):
        v = env.payload_original.get("sim_msg")
        return v if isinstance(v, int) else None
    return None


def run_scenario(
    config: Mapping[str, Any] | str,
    seed: int | None = None,
    out_dir: str | None = None,
    clock: str | None = None,
) -> ScenarioResult:
    cfg = load_config(config) if isinstance(config, str) else dict(config)
    validate_config(cfg)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    mode = clock or cfg.get("clock", "virtual")
    models = {name: LatencyModel.from_json(m) for name, m in cfg.get("latency_models", {}).items()}
    msgs, truth, node_events = generate(cfg, seed)
    data_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        data_dir = os.path.join(out_dir, "data")
    result = ScenarioResult(ground_truth=truth, node_events=node_events, emitted=len(msgs))
    if mode == "virtual":
        _run_virtual(msgs, models, seed, data_dir, result)
    else:
        _run_wall(msgs, models, seed, data_dir, result)
    if out_dir is not None:
        with open(os.path.join(out_dir, "trace.ndjson"), "w", encoding="utf-8") as fh:
            fh.write(result.trace_ndjson())
        with open(os.path.join(out_dir, "ground_truth.ndjson"), "w", encoding="utf-8") as fh:
            fh.write(result.truth_ndjson())
    return result


def _hop(models: Mapping[str, LatencyModel], name: str) -> LatencyModel:
    return models.get(name, ZERO)


def _run_virtual(msgs: list[SimMessage], models: Mapping[str, LatencyModel], seed: int,
                 data_dir: str | None, result: ScenarioResult) -> None:
    rng = random.Random(f"{seed}:latency")
    now = [Timestamp(DEFAULT_START)]
    pipe = _Pipeline(threaded=False, clock=lambda: now[0], data_dir=data_dir)
    delivered: dict[int, BusEvent] = {}
    pipe.client.on_event = lambda token, ev: delivered.__setitem__(_msg_id(ev), ev)
    queue: list[tuple[int, int, SimMessage]] = []
    records: dict[int, dict[str, Any]] = {}
    for m in msgs:
        rec: dict[str, Any] = {"msg": m.seq, "acp_id": m.acp_id, "t_emit": _ts(m.t_emit_ns)}
        records[m.seq] = rec
        first = models.get(m.latency, ZERO)
        if first.dropped(rng):
            rec["dropped"] = "gateway"
            continue
        t_gw = m.t_emit_ns + first.sample_ns(rng)
        heapq.heappush(queue, (t_gw, m.seq, m))
    while queue:
        t_gw, _, m = heapq.heappop(queue)
        rec = records[m.seq]
        t_broker = t_gw + _hop(models, "broker").sample_ns(rng)
        t_bus = t_broker + _hop(models, "bus").sample_ns(rng)
        t_client = t_bus + _hop(models, "client").sample_ns(rng)
        now[0] = Timestamp.from_ns(t_broker, digits=6)
        body = {**m.body, "acp_ts": _ts(m.t_emit_ns), "sim_msg": m.seq}
        pipe.broker.publish(m.topic, json.dumps(body))
        pipe.rts.run_until_idle()
        rec["t_gateway"] = _ts(t_gw)
        rec["t_broker"] = _ts(t_broker)
        if m.seq in delivered:
            rec["t_bus"] = _ts(t_bus)
            rec["t_client"] = _ts(t_client)
    _finish(pipe, records, result)


def _run_wall(msgs: list[SimMessage], models: Mapping[str, LatencyModel], seed: int,
              data_dir: str | None, result: ScenarioResult) -> None:
    rng = random.Random(f"{seed}:latency")
    pipe = _Pipeline(threaded=True, clock=Timestamp.now, data_dir=data_dir)
    lock = threading.Lock()
    seen: dict[int, tuple[BusEvent, Timestamp]] = {}

    def on_event(token: str, ev: BusEvent) -> None:
        t_client = Timestamp.now()
        mid = _msg_id(ev)
        if mid is not None:
            with lock:
                seen[mid] = (ev, t_client)

    pipe.client.on_event = on_event
    records: dict[int, dict[str, Any]] = {}
    sched: list[tuple[int, int, SimMessage]] = []
    base_sim = msgs[0].t_emit_ns if msgs else 0
    for m in msgs:
        first = models.get(m.latency, ZERO)
        records[m.seq] = {"msg": m.seq, "acp_id": m.acp_id}
        if first.dropped(rng):
            records[m.seq]["dropped"] = "gateway"
            continue
        offset = m.t_emit_ns - base_sim
        sched.append((offset + first.sample_ns(rng), offset, m))
    sched.sort(key=lambda x: (x[0], x[2].seq))
    wall0 = time.time_ns() + 50_000_000
    for due, offset, m in sched:
        delay = (wall0 + due - time.time_ns()) / NS
        if delay > 0:
            time.sleep(delay)
        t_emit = wall0 + offset
        body = {**m.body, "acp_ts": _ts(t_emit), "sim_msg": m.seq}
        rec = records[m.seq]
        rec["t_emit"] = _ts(t_emit)
        rec["t_gateway"] = str(Timestamp.now())
        pipe.broker.publish(m.topic, json.dumps(body))
    pipe.rts.wait_idle(30.0)
    with lock:
        for mid, (ev, t_client) in seen.items():
            rec = records[mid]
            rec["t_broker"] = ev.headers.get("receipt_ts")
            rec["t_bus"] = str(ev.published_at)
            rec["t_client"] = str(t_client)
    _finish(pipe, records, result)


def _finish(pipe: _Pipeline, records: Mapping[int, dict[str, Any]], result: ScenarioResult) -> None:
    pipe.close()
    result.trace = [records[k] for k in sorted(records)]
    result.dropped = sum(1 for r in result.trace if "dropped" in r)
    result.delivered = sum(1 for r in result.trace if "t_client" in r)
    result.fed = pipe.feed.fed
    result.deadletters = pipe.feed.deadletters
    result.stored = pipe.filer.stats()["written"] if pipe.filer is not None else 0
