"""Event-triggered emission for smart sensors."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

Alert = Callable[[float, float, "float | None"], bool]


@dataclass(frozen=True)
class SmartPolicy:
    """Emit on a change beyond ``deadband``, when ``alert(t, value, prev)`` holds,
    or when ``min_interval`` seconds have passed since the last emission.

    ``prev`` is the previous raw sample (None for the first).
    """

    deadband: float = 0.0
    min_interval: float = 3600.0
    alert: Alert | None = None

    def __post_init__(self) -> None:
        if self.deadband < 0 or self.min_interval <= 0:
            raise ValueError("deadband must be >= 0 and min_interval > 0")


@dataclass(frozen=True)
class Emission:
    t: float
    value: float
    reason: str


def smart_filter(samples: Iterable[tuple[float, float]], policy: SmartPolicy) -> Iterator[Emission]:
    """Samples must be time-ordered; the first one is always emitted."""
    last_t: float | None = None
    last_v = 0.0
    prev: float | None = None
    prev_t = -math.inf
    for t, v in samples:
        if t < prev_t:
            raise ValueError(f"samples out of order at t={t}")
        prev_t = t
        reason = None
        if last_t is None:
            reason = "first"
        elif policy.alert is not None and policy.alert(t, v, prev):
            reason = "alert"
        elif abs(v - last_v) > policy.deadband:
            reason = "change"
        elif t - last_t >= policy.min_interval:
            reason = "heartbeat"
        if reason is not None:
            last_t, last_v = t, v
            yield Emission(t, v, reason)
        prev = v


@dataclass(frozen=True)
class StepDay:
    samples: list[tuple[float, float]]
    steps: list[float]


def step_day(
    seconds: int = 86400,
    steps: int = 40,
    base: float = 20.0,
    noise: float = 0.05,
    step_size: tuple[float, float] = (2.0, 5.0),
    seed: int = 0,
) -> StepDay:
    """A 1 Hz noisy-flat trace with level steps at random distinct seconds."""
    rng = random.Random(seed)
    times = sorted(rng.sample(range(60, seconds), steps))
    level = base
    out: list[tuple[float, float]] = []
    k = 0
    for t in range(seconds):
        if k < len(times) and t == times[k]:
            level += rng.choice((-1, 1)) * rng.uniform(*step_size)
            k += 1
        out.append((float(t), level + rng.gauss(0.0, noise)))
    return StepDay(out, [float(t) for t in times])


def missed(emissions: Sequence[Emission], event_times: Sequence[float]) -> list[float]:
    """True event times with no emission at exactly that sample."""
    emitted = {e.t for e in emissions}
    return [t for t in event_times if t not in emitted]
