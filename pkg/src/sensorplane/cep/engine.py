"""Incremental complex event matching over a bounded fact window.

A new fact is only ever matched together with facts already in the window,
so each evaluation explores the bindings that involve the new fact and no
others. Complex events produced are asserted back as facts, which lets rules
build on the output of other rules.
"""

from __future__ import annotations

import itertools
import operator
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

from ..core import Timestamp
from .features import AtomicEvent
from .rules import Before, Constraint, Dist, Rule, SameCrate, Span, ValueCmp, constraint_vars

DEFAULT_K = 100
DEFAULT_MAX_BINDINGS = 10_000
MAX_FEEDBACK_DEPTH = 8

_OPS: dict[str, Callable[[float, float], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class ComplexEvent:
    e: str
    t: Timestamp
    sensor_ids: tuple[str, ...]
    facts: tuple[Fact, ...]
    rule_id: str = ""
    confidence: float = 1.0

    def to_json(self) -> dict[str, object]:
        return {
            "acp_event": self.e,
            "acp_ts": str(self.t),
            "sensor_ids": list(self.sensor_ids),
            "acp_confidence": self.confidence,
        }


Event = Union[AtomicEvent, ComplexEvent]


@dataclass(frozen=True)
class Fact:
    """An event sitting in the window, with the id it was asserted under."""

    fact_id: int
    event: Event

    @property
    def e(self) -> str:
        return self.event.e

    @property
    def t(self) -> Timestamp:
        return self.event.t

    @property
    def v(self) -> float | None:
        return self.event.v if isinstance(self.event, AtomicEvent) else None

    @property
    def sensors(self) -> tuple[str, ...]:
        return self.event.sensor_ids

    @property
    def confidence(self) -> float:
        return self.event.confidence


class FactWindow:
    """FIFO of at most ``k`` facts."""

    def __init__(self, k: int = DEFAULT_K):
        if k < 1:
            raise ValueError("window capacity must be at least 1")
        self.k = k
        self._facts: deque[Fact] = deque()

    def append(self, fact: Fact) -> Fact | None:
        evicted = self._facts.popleft() if len(self._facts) >= self.k else None
        self._facts.append(fact)
        return evicted

    def __iter__(self):
        return iter(self._facts)

    def __len__(self) -> int:
        return len(self._facts)

    def facts(self) -> list[Fact]:
        return list(self._facts)


SensorDistance = Callable[[str, str], "float | None"]
CrateOf = Callable[[str], "str | None"]


@dataclass
class Matcher:
    """Evaluates rule constraints against a binding of variables to facts."""

    distance: SensorDistance | None = None
    crate_of: CrateOf | None = None

    def fact_distance(self, a: Fact, b: Fact) -> float | None:
        if self.distance is None:
            return None
        worst = 0.0
        for sa in a.sensors:
            for sb in b.sensors:
                if sa == sb:
                    continue
                d = self.distance(sa, sb)
                if d is None:
                    return None
                worst = max(worst, d)
        return worst

    def same_crate(self, a: Fact, b: Fact) -> bool:
        if self.crate_of is None:
            return False
        crates = {self.crate_of(s) for s in (*a.sensors, *b.sensors)}
        return len(crates) == 1 and None not in crates

    def check(self, c: Constraint, binding: dict[str, Fact]) -> bool:
        if isinstance(c, Before):
            return binding[c.a].t < binding[c.b].t
        if isinstance(c, ValueCmp):
            v = binding[c.var].v
            return v is not None and _OPS[c.op](v, c.threshold)
        if isinstance(c, Dist):
            d = self.fact_distance(binding[c.a], binding[c.b])
            return d is not None and d < c.limit
        if isinstance(c, SameCrate):
            return self.same_crate(binding[c.a], binding[c.b])
        if isinstance(c, Span):
            ts = [f.t.value for f in binding.values()]
            return float(max(ts) - min(ts)) < c.limit
        raise TypeError(c)

    def complete(self, rule: Rule, binding: dict[str, Fact]) -> bool:
        return all(self.check(c, binding) for c in rule.constraints)


def build_event(rule: Rule, binding: dict[str, Fact], t: Timestamp) -> ComplexEvent:
    facts = tuple(binding[v] for v in rule.variables)
    sensors = sorted({s for f in facts for s in f.sensors})
    return ComplexEvent(
        e=rule.output,
        t=t,
        sensor_ids=tuple(sensors),
        facts=facts,
        rule_id=rule.rule_id,
        confidence=min(f.confidence for f in facts),
    )


class CEPEngine:
    def __init__(
        self,
        rules: Iterable[Rule] = (),
        k: int = DEFAULT_K,
        distance: SensorDistance | None = None,
        crate_of: CrateOf | None = None,
        max_bindings: int = DEFAULT_MAX_BINDINGS,
        feedback: bool = True,
    ):
        self.window = FactWindow(k)
        self.matcher = Matcher(distance, crate_of)
        self.max_bindings = max_bindings
        self.feedback = feedback
        self._ids = itertools.count(1)
        self.rules: list[Rule] = []
        self.overflows = 0
        self.asserted = 0
        self.evicted = 0
        for r in rules:
            self.add_rule(r)

    def add_rule(self, rule: Rule) -> None:
        self.rules.append(rule)
        self.rules.sort(key=lambda r: r.rule_id)

    def assert_fact(self, event: Event) -> tuple[Fact, Fact | None]:
        fact = Fact(next(self._ids), event)
        evicted = self.window.append(fact)
        self.asserted += 1
        if evicted is not None:
            self.evicted += 1
        return fact, evicted

    def evaluate(self, new: Fact) -> list[ComplexEvent]:
        """Complex events satisfied by ``new`` together with facts in the window."""
        out: list[ComplexEvent] = []
        others = [f for f in self.window if f.fact_id != new.fact_id]
        budget = [self.max_bindings]
        for rule in self.rules:
            for slot, term in enumerate(rule.terms):
                if term.event != new.e:
                    continue
                for binding in self._extend(rule, slot, new, others, budget):
                    out.append(build_event(rule, binding, new.t))
        if budget[0] < 0:
            self.overflows += 1
        return out

    def _extend(self, rule: Rule, slot: int, new: Fact, others: Sequence[Fact], budget: list[int]):
        rest = [i for i in range(len(rule.terms)) if i != slot]
        binding: dict[str, Fact] = {rule.terms[slot].var: new}
        bound_vars = {rule.terms[slot].var}
        pending = list(rule.constraints)

        def ready(bound: set[str]) -> list[Constraint]:
            return [c for c in pending if all(v in bound for v in constraint_vars(c)) and not isinstance(c, Span)]

        # constraints checkable with only the new fact bound
        first = ready(bound_vars)
        if not all(self.matcher.check(c, binding) for c in first):
            return
        stages: list[list[Constraint]] = []
        seen = set(map(id, first))
        bound = set(bound_vars)
        for i in rest:
            bound.add(rule.terms[i].var)
            now = [c for c in ready(bound) if id(c) not in seen]
            seen.update(map(id, now))
            stages.append(now)
        spans = [c for c in rule.constraints if isinstance(c, Span)]

        def walk(depth: int, used: set[int]):
            if depth == len(rest):
                if all(self.matcher.check(c, binding) for c in spans):
                    yield dict(binding)
                return
            term = rule.terms[rest[depth]]
            for fact in others:
                if fact.e != term.event or fact.fact_id in used:
                    continue
                budget[0] -= 1
                if budget[0] < 0:
                    return
                binding[term.var] = fact
                if all(self.matcher.check(c, binding) for c in stages[depth]):
                    used.add(fact.fact_id)
                    yield from walk(depth + 1, used)
                    used.discard(fact.fact_id)
                del binding[term.var]

        yield from walk(0, {new.fact_id})

    def process(self, event: Event, _depth: int = 0) -> list[ComplexEvent]:
        """Assert, evaluate and feed detected complex events back in."""
        fact, _ = self.assert_fact(event)
        found = self.evaluate(fact)
        out = list(found)
        if self.feedback and _depth < MAX_FEEDBACK_DEPTH:
            for ce in found:
                out.extend(self.process(ce, _depth + 1))
        return out

    def stats(self) -> dict[str, int]:
        return {
            "rules": len(self.rules),
            "window": len(self.window),
            "k": self.window.k,
            "asserted": self.asserted,
            "evicted": self.evicted,
            "overflows": self.overflows,
        }

