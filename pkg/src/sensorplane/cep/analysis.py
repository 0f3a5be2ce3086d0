"""The analysis verticle: envelopes in, atomic and complex events out."""

from __future__ import annotations

import time
from typing import Any, Callable

from ..core import Envelope
from ..rts import FEED, BusEvent, LatencyStats, RealTimeServer, VerticleClass, VerticleContext, VerticleSpec
from .engine import CEPEngine, ComplexEvent
from .features import AtomicEvent, Detector, FeatureExtractor, StatisticalDetector

ATOMIC_ADDRESS = "cep.atomic"
COMPLEX_ADDRESS = "cep.complex"


def atomic_json(a: AtomicEvent) -> dict[str, Any]:
    return {"acp_event": a.e, "acp_ts": str(a.t), "acp_id": a.s, "value": a.v, "acp_confidence": a.confidence}


def event_from_envelope(env: Envelope) -> AtomicEvent | None:
    """Envelopes already marked with ``acp_event`` (smart sensors) enter as atomic events."""
    if env.acp_event is None:
        return None
    try:
        v = float(env.acp_event_value) if env.acp_event_value is not None else None
    except ValueError:
        v = None
    conf = env.acp_confidence if env.acp_confidence is not None else 1.0
    return AtomicEvent(env.acp_event, env.acp_ts, v, env.acp_id, conf)


class Analyzer:
    """Feature extraction, detection and rule matching for one stream.

    With ``edge_trigger`` a detector firing repeatedly on one excursion
    yields a single atomic event; it re-arms when the detector goes quiet.
    """

    def __init__(
        self,
        engine: CEPEngine,
        extractor: FeatureExtractor | None = None,
        detector: Detector | None = None,
        edge_trigger: bool = True,
    ):
        self.engine = engine
        self.extractor = extractor or FeatureExtractor()
        self.detector = detector or StatisticalDetector()
        self.edge_trigger = edge_trigger
        self._active: set[tuple[str, str]] = set()
        self.timing = LatencyStats()

    def process(self, env: Envelope) -> tuple[list[AtomicEvent], list[ComplexEvent]]:
        t0 = time.perf_counter()
        atomics: list[AtomicEvent] = []
        marked = event_from_envelope(env)
        if marked is not None:
            atomics.append(marked)
        for feature in self.extractor.update(env):
            fv = self.extractor.extract(env.acp_id, feature, env.acp_ts)
            found = self.detector.detect(fv) if fv is not None else []
            key = (env.acp_id, feature)
            if not self.edge_trigger:
                atomics.extend(found)
            elif found and key not in self._active:
                self._active.add(key)
                atomics.extend(found)
            elif not found:
                self._active.discard(key)
        complexes: list[ComplexEvent] = []
        for a in atomics:
            complexes.extend(self.engine.process(a))
        self.timing.add(time.perf_counter() - t0)
        return atomics, complexes


class AnalysisVerticle:
    def __init__(
        self,
        rts: RealTimeServer,
        analyzer: Analyzer,
        address: str = FEED,
        name: str = "Analysis",
        on_complex: Callable[[ComplexEvent], None] | None = None,
    ):
        self.analyzer = analyzer
        self.on_complex = on_complex
        self.atomic_count = 0
        self.complex_count = 0
        self.verticle = rts.deploy(VerticleSpec(name, VerticleClass.ANALYSIS, (address,), self._handle))

    def _handle(self, event: BusEvent, ctx: VerticleContext) -> None:
        env = event.body
        if not isinstance(env, Envelope):
            return
        atomics, complexes = self.analyzer.process(env)
        for a in atomics:
            self.atomic_count += 1
            ctx.publish(ATOMIC_ADDRESS, atomic_json(a))
        for ce in complexes:
            self.complex_count += 1
            ctx.publish(COMPLEX_ADDRESS, ce.to_json())
            if self.on_complex is not None:
                self.on_complex(ce)
