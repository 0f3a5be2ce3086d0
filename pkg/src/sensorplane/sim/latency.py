"""Per-hop latency models and the per-stage latency report."""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..core import PlatformError

STAMPS = ("t_emit", "t_gateway", "t_broker", "t_bus", "t_client")
STAGES = {
    "gateway": ("t_emit", "t_gateway"),
    "broker": ("t_gateway", "t_broker"),
    "bus": ("t_broker", "t_bus"),
    "client": ("t_bus", "t_client"),
    "platform": ("t_broker", "t_client"),
    "total": ("t_emit", "t_client"),
}


class EmptyTrace(PlatformError, ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    """``dist`` is ``const`` (``mean_ms``), ``normal`` (``mean_ms``, ``std_ms``, clipped at 0),
    or ``uniform`` (``low_ms``, ``high_ms``). ``drop`` is a per-message loss probability."""

    dist: str = "const"
    mean_ms: float = 0.0
    std_ms: float = 0.0
    low_ms: float = 0.0
    high_ms: float = 0.0
    drop: float = 0.0

    def __post_init__(self) -> None:
        if self.dist not in ("const", "normal", "uniform"):
            raise ValueError(f"unknown latency distribution {self.dist!r}")
        if self.std_ms < 0 or self.mean_ms < 0 or not 0.0 <= self.drop < 1.0:
            raise ValueError("latency parameters must be non-negative and drop in [0,1)")

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> LatencyModel:
        return cls(
            dist=str(obj.get("dist", "const")),
            mean_ms=float(obj.get("mean_ms", obj.get("value_ms", 0.0))),
            std_ms=float(obj.get("std_ms", 0.0)),
            low_ms=float(obj.get("low_ms", 0.0)),
            high_ms=float(obj.get("high_ms", 0.0)),
            drop=float(obj.get("drop", 0.0)),
        )

    def sample_ns(self, rng: random.Random) -> int:
        if self.dist == "const":
            ms = self.mean_ms
        elif self.dist == "normal":
            ms = max(0.0, rng.gauss(self.mean_ms, self.std_ms))
        else:
            ms = rng.uniform(self.low_ms, self.high_ms)
        return round(ms * 1_000_000)

    def dropped(self, rng: random.Random) -> bool:
        return self.drop > 0 and rng.random() < self.drop


ZERO = LatencyModel()


def _ns(v: Any) -> int:
    if isinstance(v, int):
        return v
    text = str(v)
    whole, _, frac = text.partition(".")
    return int(whole) * 1_000_000_000 + int((frac + "000000000")[:9] or 0)


def stage_deltas_ms(trace: Iterable[Mapping[str, Any]], stage: str) -> np.ndarray:
    a, b = STAGES[stage]
    vals = [(_ns(r[b]) - _ns(r[a])) / 1e6 for r in trace if r.get(a) is not None and r.get(b) is not None]
    return np.asarray(vals, dtype=float)


def latency_report(trace: Sequence[Mapping[str, Any]]) -> dict[str, dict[str, float]]:
    """Mean, sample stddev, p50 and p99 in milliseconds for each stage."""
    if not trace:
        raise EmptyTrace("trace has no messages")
    out: dict[str, dict[str, float]] = {}
    for stage in STAGES:
        d = stage_deltas_ms(trace, stage)
        if d.size == 0:
            continue
        out[stage] = {
            "n": int(d.size),
            "mean": float(d.mean()),
            "stddev": float(d.std(ddof=1)) if d.size > 1 else 0.0,
            "p50": float(np.percentile(d, 50)),
            "p99": float(np.percentile(d, 99)),
        }
    return out


def ecdf(values: np.ndarray) -> list[tuple[float, float]]:
    if values.size == 0:
        return []
    xs = np.sort(values)
    n = xs.size
    return [(float(x), (i + 1) / n) for i, x in enumerate(xs)]


def ecdf_csv(trace: Sequence[Mapping[str, Any]], stages: Sequence[str] = tuple(STAGES)) -> str:
    if not trace:
        raise EmptyTrace("trace has no messages")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "value_ms", "cumulative_fraction"])
    for stage in stages:
        for x, f in ecdf(stage_deltas_ms(trace, stage)):
            w.writerow([stage, f"{x:.6f}", f"{f:.6f}"])
    return buf.getvalue()


def read_trace(path: str) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
