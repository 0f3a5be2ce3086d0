"""Feature extraction and atomic event detection.

For an observed sensor the extractor assembles: the readings in the last
``window_s`` seconds, a baseline from just before that window, Pearson
correlations against sensors in its vicinity, and month/day/hour of the
reading. A :class:`Detector` turns that vector into atomic events.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Mapping, NamedTuple, Protocol, Sequence

from ..core import Envelope, PlatformError, Timestamp

DIVERGENCE_EPS = 1e-9


class LengthMismatch(PlatformError, ValueError):
    pass


class TooFewSamples(PlatformError, ValueError):
    pass


class Correlation(NamedTuple):
    value: float
    flat: bool = False


def pearson(x: Sequence[float], y: Sequence[float], min_overlap: int = 2) -> Correlation:
    """Product-moment correlation. Zero variance on either side gives ``Correlation(0.0, flat=True)``."""
    n = len(x)
    if n != len(y):
        raise LengthMismatch(f"{n} vs {len(y)} samples")
    if n < max(2, min_overlap):
        raise TooFewSamples(f"need {max(2, min_overlap)} paired samples, have {n}")
    if max(x) == min(x) or max(y) == min(y):
        return Correlation(0.0, True)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        return Correlation(0.0, True)
    r = sxy / math.sqrt(sxx * syy)
    return Correlation(max(-1.0, min(1.0, r)))


def divergence_score(window: Sequence[float], baseline: Sequence[float]) -> float:
    """|mean(window) - mean(baseline)| / (pstdev(baseline) + eps)."""
    if len(baseline) < 10 or len(window) < 3:
        raise TooFewSamples(f"window {len(window)} (min 3), baseline {len(baseline)} (min 10)")
    mb = math.fsum(baseline) / len(baseline)
    sd = math.sqrt(math.fsum((v - mb) ** 2 for v in baseline) / len(baseline))
    mw = math.fsum(window) / len(window)
    return abs(mw - mb) / (sd + DIVERGENCE_EPS)


def temporal_params(ts: Timestamp) -> tuple[int, int, int]:
    d = datetime.fromtimestamp(ts.seconds, tz=timezone.utc)
    return d.month, d.day, d.hour


@dataclass(frozen=True)
class VicinityConfig:
    """``rule`` is ``same_crate``, ``radius`` (uses ``radius_m``) or ``explicit`` (uses ``sensors``)."""

    rule: str = "same_crate"
    window_s: float = 900.0
    min_overlap: int = 3
    baseline_s: float = 3600.0
    radius_m: float = 10.0
    sensors: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.window_s <= 0:
            raise ValueError("window must be positive")
        if self.min_overlap < 2:
            raise ValueError("min_overlap must be at least 2")
        if self.rule not in ("same_crate", "radius", "explicit"):
            raise ValueError(f"unknown vicinity rule {self.rule!r}")


@dataclass
class CorrelationVector:
    values: dict[str, float] = field(default_factory=dict)
    flat: set[str] = field(default_factory=set)
    omitted: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    def mean_abs(self) -> float | None:
        if not self.values:
            return None
        return math.fsum(abs(v) for v in self.values.values()) / len(self.values)


@dataclass(frozen=True)
class FeatureVector:
    sensor: str
    feature: str
    t: Timestamp
    times: tuple[float, ...]
    readings: tuple[float, ...]
    baseline: tuple[float, ...]
    correlations: CorrelationVector
    month: int
    day: int
    hour: int
    sensor_type: str


@dataclass(frozen=True)
class AtomicEvent:
    e: str
    t: Timestamp
    v: float | None
    s: str
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")

    @property
    def sensor_ids(self) -> tuple[str, ...]:
        return (self.s,)


class Series:
    """Time-ordered (seconds, value) samples for one sensor feature."""

    def __init__(self, horizon_s: float):
        self.horizon_s = horizon_s
        self.times: deque[float] = deque()
        self.values: deque[float] = deque()

    def add(self, t: float, v: float) -> None:
        if self.times and t < self.times[-1]:
            # late sample: insert in order
            i = bisect.bisect_right(list(self.times), t)
            self.times.insert(i, t)
            self.values.insert(i, v)
        else:
            self.times.append(t)
            self.values.append(v)
        cutoff = self.times[-1] - self.horizon_s
        while self.times and self.times[0] < cutoff:
            self.times.popleft()
            self.values.popleft()

    def between(self, lo: float, hi: float, hi_open: bool = False) -> tuple[list[float], list[float]]:
        ts = list(self.times)
        i = bisect.bisect_left(ts, lo)
        j = bisect.bisect_left(ts, hi) if hi_open else bisect.bisect_right(ts, hi)
        vs = list(self.values)
        return ts[i:j], vs[i:j]


@dataclass(frozen=True)
class SensorInfo:
    acp_type: str = "unknown"
    crate: str | None = None


DistanceFn = Callable[[str, str], "float | None"]


class FeatureExtractor:
    """Per-sensor rolling state; owned by one analysis verticle."""

    def __init__(self, config: VicinityConfig | None = None, distance: DistanceFn | None = None):
        self.config = config or VicinityConfig()
        self.distance = distance
        self._series: dict[tuple[str, str], Series] = {}
        self._info: dict[str, SensorInfo] = {}

    @property
    def horizon_s(self) -> float:
        return self.config.window_s + self.config.baseline_s

    def register(self, acp_id: str, acp_type: str = "unknown", crate: str | None = None) -> None:
        self._info[acp_id] = SensorInfo(acp_type, crate)

    def info(self, acp_id: str) -> SensorInfo:
        return self._info.get(acp_id, SensorInfo())

    def sensors(self) -> list[str]:
        return sorted({s for s, _ in self._series} | set(self._info))

    def add(self, acp_id: str, feature: str, t: float, value: float) -> None:
        key = (acp_id, feature)
        series = self._series.get(key)
        if series is None:
            series = self._series[key] = Series(self.horizon_s)
        series.add(t, value)

    def update(self, env: Envelope) -> list[str]:
        """Ingest an envelope's cooked features; returns the features updated."""
        if env.acp_id not in self._info:
            self._info[env.acp_id] = SensorInfo(env.acp_type, getattr(env.acp_location, "parent_crate_id", None))
        t = float(env.acp_ts)
        for name, value in env.payload_cooked.items():
            self.add(env.acp_id, name, t, float(value))
        return list(env.payload_cooked)

    def series(self, acp_id: str, feature: str) -> Series | None:
        return self._series.get((acp_id, feature))

    def vicinity(self, s_o: str) -> list[str]:
        cfg = self.config
        others = [s for s in self.sensors() if s != s_o]
        if cfg.rule == "explicit":
            return sorted(s for s in cfg.sensors.get(s_o, ()) if s != s_o)
        if cfg.rule == "same_crate":
            crate = self.info(s_o).crate
            return [s for s in others if crate is not None and self.info(s).crate == crate]
        if self.distance is None:
            return []
        out = []
        for s in others:
            d = self.distance(s_o, s)
            if d is not None and d <= cfg.radius_m:
                out.append(s)
        return out

    def correlation_vector(self, s_o: str, feature: str, now: float) -> CorrelationVector:
        cfg = self.config
        out = CorrelationVector()
        own = self.series(s_o, feature)
        if own is None:
            return out
        xt, xv = own.between(now - cfg.window_s, now)
        if not xt:
            return out
        slack = cfg.window_s / len(xt)
        for other in self.vicinity(s_o):
            series = self.series(other, feature)
            if series is None:
                out.omitted[other] = "no_feature"
                continue
            yt, yv = series.between(now - cfg.window_s - slack, now + slack)
            xs, ys = _pair_nearest(xt, xv, yt, yv, slack)
            if len(xs) < cfg.min_overlap:
                out.omitted[other] = "insufficient_overlap"
                continue
            c = pearson(xs, ys, cfg.min_overlap)
            out.values[other] = c.value
            if c.flat:
                out.flat.add(other)
        return out

    def extract(self, acp_id: str, feature: str, now: Timestamp) -> FeatureVector | None:
        series = self.series(acp_id, feature)
        if series is None:
            return None
        t = float(now)
        cfg = self.config
        times, readings = series.between(t - cfg.window_s, t)
        _, baseline = series.between(t - cfg.window_s - cfg.baseline_s, t - cfg.window_s, hi_open=True)
        m, d, h = temporal_params(now)
        return FeatureVector(
            sensor=acp_id,
            feature=feature,
            t=now,
            times=tuple(times),
            readings=tuple(readings),
            baseline=tuple(baseline),
            correlations=self.correlation_vector(acp_id, feature, t),
            month=m,
            day=d,
            hour=h,
            sensor_type=self.info(acp_id).acp_type,
        )


def _pair_nearest(
    xt: Sequence[float], xv: Sequence[float], yt: Sequence[float], yv: Sequence[float], slack: float
) -> tuple[list[float], list[float]]:
    xs: list[float] = []
    ys: list[float] = []
    if not yt:
        return xs, ys
    for t, v in zip(xt, xv):
        i = bisect.bisect_left(yt, t)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(yt) and (best is None or abs(yt[j] - t) < abs(yt[best] - t)):
                best = j
        if best is not None and abs(yt[best] - t) <= slack:
            xs.append(v)
            ys.append(yv[best])
    return xs, ys


class Detector(Protocol):
    def detect(self, fv: FeatureVector) -> list[AtomicEvent]: ...


@dataclass
class StatisticalDetector:
    """Fires ``<feature>_DIVERGE`` when the window mean leaves the baseline.

    Needs divergence above ``theta`` and, when any vicinity sensor could be
    correlated, a mean absolute correlation of at least ``c_min``. With
    ``directional`` the event is ``<feature>_RISE`` or ``<feature>_FALL``.
    """

    theta: float = 3.0
    c_min: float = 0.3
    directional: bool = False

    def score(self, fv: FeatureVector) -> float | None:
        try:
            return divergence_score(fv.readings, fv.baseline)
        except TooFewSamples:
            return None

    def detect(self, fv: FeatureVector) -> list[AtomicEvent]:
        score = self.score(fv)
        if score is None or score <= self.theta:
            return []
        corroboration = fv.correlations.mean_abs()
        if corroboration is not None and corroboration < self.c_min:
            return []
        name = f"{fv.feature}_DIVERGE"
        if self.directional:
            up = math.fsum(fv.readings) / len(fv.readings) > math.fsum(fv.baseline) / len(fv.baseline)
            name = f"{fv.feature}_{'RISE' if up else 'FALL'}"
        return [AtomicEvent(name, fv.t, fv.readings[-1], fv.sensor, min(1.0, score / (2 * self.theta)))]


def detect_atomic(fv: FeatureVector, detector: Detector | None = None) -> list[AtomicEvent]:
    return (detector or StatisticalDetector()).detect(fv)


def events_from(items: Iterable[AtomicEvent]) -> list[AtomicEvent]:
    return sorted(items, key=lambda a: (a.t.value, a.s, a.e))
