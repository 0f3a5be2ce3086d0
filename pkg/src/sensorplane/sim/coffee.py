"""Coffee pot node: a scale under the pot plus grinder and brewer power meters.

:func:`coffee_step` is the node's local logic. :func:`render_script` turns a
list of scripted actions into the sample stream the node would see, together
with the events a person watching the pot would have written down.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

POT_REMOVED = "pot-removed"
NEW_POT = "new-pot"
POT_POURED = "pot-poured"
POT_EMPTY = "pot-empty"
COFFEE_GRINDING = "coffee-grinding"
EVENTS = (POT_REMOVED, NEW_POT, POT_POURED, POT_EMPTY, COFFEE_GRINDING)

POT_KG = 0.5
CUP_KG = 0.25
FULL_COFFEE_KG = 1.5


@dataclass(frozen=True)
class CoffeeConfig:
    power_on_w: float = 40.0
    absent_kg: float = 0.4
    full_kg: float = 1.5
    pour_kg: float = 0.15
    empty_kg: float = 0.6
    rearm_empty_kg: float = 0.8
    settle_kg: float = 0.1
    alpha: float = 0.2

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> CoffeeConfig:
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: float(v) for k, v in obj.items() if k in known})


class Phase(str, Enum):
    IDLE = "idle"
    GRINDING = "grinding"
    BREWING = "brewing"
    FRESH = "fresh"
    EMPTYING = "emptying"


@dataclass(frozen=True)
class CoffeeInputs:
    weight: float
    grinder_w: float = 0.0
    brewer_w: float = 0.0

    def __post_init__(self) -> None:
        for name in ("weight", "grinder_w", "brewer_w"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class CoffeeState:
    pot_present: bool = True
    weight: float = POT_KG
    grinder_power: float = 0.0
    brewer_power: float = 0.0
    phase: Phase = Phase.IDLE
    ref_weight: float = POT_KG
    brewed_since: bool = False
    empty_flag: bool = True

    @classmethod
    def from_reading(cls, inputs: CoffeeInputs, cfg: CoffeeConfig | None = None) -> CoffeeState:
        """Seed a state from the first reading without announcing anything."""
        cfg = cfg or CoffeeConfig()
        present = inputs.weight >= cfg.absent_kg
        return cls(
            pot_present=present,
            weight=inputs.weight,
            grinder_power=inputs.grinder_w,
            brewer_power=inputs.brewer_w,
            phase=_phase(inputs, present, Phase.IDLE, cfg),
            ref_weight=inputs.weight,
            empty_flag=present and inputs.weight <= cfg.empty_kg,
        )


@dataclass(frozen=True)
class CoffeeEvent:
    t: float
    event: str
    weight: float


def _phase(inp: CoffeeInputs, present: bool, prev: Phase, cfg: CoffeeConfig) -> Phase:
    if inp.grinder_w > cfg.power_on_w:
        return Phase.GRINDING
    if inp.brewer_w > cfg.power_on_w:
        return Phase.BREWING
    if prev in (Phase.GRINDING, Phase.BREWING):
        return Phase.IDLE
    return prev


def coffee_step(
    state: CoffeeState, inputs: CoffeeInputs | Mapping[str, float], t: float, cfg: CoffeeConfig | None = None
) -> tuple[CoffeeState, list[CoffeeEvent]]:
    cfg = cfg or CoffeeConfig()
    if not isinstance(inputs, CoffeeInputs):
        inputs = CoffeeInputs(float(inputs["weight"]), float(inputs.get("grinder_w", 0.0)),
                              float(inputs.get("brewer_w", 0.0)))
    w = inputs.weight
    events: list[str] = []
    brewed = state.brewed_since
    if inputs.grinder_w > cfg.power_on_w >= state.grinder_power:
        events.append(COFFEE_GRINDING)
        brewed = True
    if inputs.brewer_w > cfg.power_on_w:
        brewed = True

    present = w >= cfg.absent_kg
    ref = state.ref_weight
    empty_flag = state.empty_flag
    phase = _phase(inputs, present, state.phase, cfg)

    if state.pot_present and not present:
        events.append(POT_REMOVED)
    elif present:
        returned = not state.pot_present
        if w > cfg.full_kg and brewed:
            events.append(NEW_POT)
            brewed = False
            empty_flag = False
            ref = w
            phase = Phase.FRESH
        elif ref - w >= cfg.pour_kg:
            events.append(POT_POURED)
            ref = w
            phase = Phase.EMPTYING
        elif returned or w - ref >= cfg.settle_kg:
            ref = w
        elif abs(w - ref) < cfg.settle_kg:
            ref += cfg.alpha * (w - ref)
        if w > cfg.rearm_empty_kg:
            empty_flag = False
        if w <= cfg.empty_kg and not empty_flag:
            events.append(POT_EMPTY)
            empty_flag = True
            phase = Phase.IDLE

    new = replace(
        state,
        pot_present=present,
        weight=w,
        grinder_power=inputs.grinder_w,
        brewer_power=inputs.brewer_w,
        phase=phase,
        ref_weight=ref,
        brewed_since=brewed,
        empty_flag=empty_flag,
    )
    return new, [CoffeeEvent(t, e, w) for e in events]


def run_coffee(
    samples: Iterable[tuple[float, CoffeeInputs]], cfg: CoffeeConfig | None = None
) -> list[CoffeeEvent]:
    out: list[CoffeeEvent] = []
    state: CoffeeState | None = None
    for t, inp in samples:
        if state is None:
            state = CoffeeState.from_reading(inp, cfg)
            continue
        state, events = coffee_step(state, inp, t, cfg)
        out.extend(events)
    return out


# -- scripted days --------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """One scripted thing a person does.

    ``grind`` runs the grinder for ``duration``. ``brew`` takes the pot off the
    scale, runs the brewer for ``duration`` and puts the pot back full.
    ``pour`` pours one cup with the pot on the scale; ``lift_pour`` lifts the
    pot for ``duration`` and returns it one cup lighter. ``remove`` lifts the
    pot for ``duration`` and puts it back unchanged.
    """

    at: float
    action: str
    duration: float = 0.0

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Action:
        return cls(float(obj["at"]), str(obj["action"]), float(obj.get("duration", 0.0)))

    def to_json(self) -> dict[str, Any]:
        return {"at": self.at, "action": self.action, "duration": self.duration}


ACTIONS = ("grind", "brew", "pour", "lift_pour", "remove")
DEFAULT_DURATION = {"grind": 30.0, "brew": 300.0, "lift_pour": 20.0, "remove": 30.0, "pour": 0.0}


@dataclass
class _Pot:
    coffee: float = 0.0
    on_scale: bool = True
    empty_told: bool = True


@dataclass
class RenderedScript:
    samples: list[tuple[float, CoffeeInputs]] = field(default_factory=list)
    truth: list[CoffeeEvent] = field(default_factory=list)


def render_script(
    actions: Sequence[Action],
    duration: float,
    interval: float = 5.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    cfg: CoffeeConfig | None = None,
) -> RenderedScript:
    """Sample the pot every ``interval`` seconds and label what happened.

    Action times are snapped up to the next sample. Truth labels are written
    from the physical pot (its contents and whether it sits on the scale),
    not from the node's logic.
    """
    cfg = cfg or CoffeeConfig()
    rng = random.Random(seed)
    pending: dict[int, list[Action]] = {}
    for a in sorted(actions, key=lambda a: a.at):
        if a.action not in ACTIONS:
            raise ValueError(f"unknown coffee action {a.action!r}")
        pending.setdefault(math.ceil(a.at / interval), []).append(a)

    out = RenderedScript()
    pot = _Pot()
    grinder_until = brewer_until = -1.0
    lifted_until = -1.0
    back_delta = 0.0  # change in contents when a lifted pot comes back
    n = int(duration // interval)
    for i in range(n + 1):
        t = i * interval
        labels: list[str] = []
        if lifted_until >= 0 and t >= lifted_until:
            lifted_until = -1.0
            pot.on_scale = True
            before = pot.coffee
            pot.coffee = max(0.0, pot.coffee + back_delta)
            if back_delta > 0:
                labels.append(NEW_POT)
                pot.empty_told = False
            elif back_delta < 0 and before > 0:
                labels.append(POT_POURED)
            back_delta = 0.0
            if pot.coffee <= cfg.empty_kg - POT_KG and not pot.empty_told:
                labels.append(POT_EMPTY)
                pot.empty_told = True
        for a in pending.get(i, []):
            dur = a.duration or DEFAULT_DURATION[a.action]
            if a.action == "grind":
                if t >= grinder_until:
                    labels.append(COFFEE_GRINDING)
                grinder_until = t + dur
            elif a.action == "pour" and pot.on_scale and pot.coffee > 0:
                pot.coffee = max(0.0, pot.coffee - CUP_KG)
                labels.append(POT_POURED)
                if pot.coffee <= cfg.empty_kg - POT_KG and not pot.empty_told:
                    labels.append(POT_EMPTY)
                    pot.empty_told = True
            elif a.action in ("brew", "lift_pour", "remove") and pot.on_scale:
                pot.on_scale = False
                labels.append(POT_REMOVED)
                lifted_until = t + dur
                if a.action == "brew":
                    brewer_until = t + dur
                    back_delta = FULL_COFFEE_KG - pot.coffee
                elif a.action == "lift_pour":
                    back_delta = -CUP_KG if pot.coffee > 0 else 0.0
        grinder = 120.0 if t < grinder_until else 0.0
        brewer = 1000.0 if t < brewer_until else 0.0
        weight = POT_KG + pot.coffee if pot.on_scale else 0.0
        if noise_sigma:
            weight = max(0.0, weight + rng.gauss(0.0, noise_sigma))
        out.samples.append((t, CoffeeInputs(weight, grinder, brewer)))
        order = {e: k for k, e in enumerate((COFFEE_GRINDING, POT_REMOVED, NEW_POT, POT_POURED, POT_EMPTY))}
        for e in sorted(labels, key=order.__getitem__):
            out.truth.append(CoffeeEvent(t, e, weight))
    return out


def brew_day(hours: float = 10.0, seed: int = 0, brews: int | None = None) -> list[Action]:
    """A working day at the pot: a few brews, each drunk over the following hours."""
    rng = random.Random(seed)
    span = hours * 3600.0
    brews = brews or max(1, int(hours // 2.5))
    slot = span / brews
    actions: list[Action] = []
    for b in range(brews):
        start = b * slot + rng.uniform(300, 900)
        actions.append(Action(start, "grind", 30.0))
        actions.append(Action(start + 120, "brew", 300.0))
        t = start + 120 + 300 + rng.uniform(300, 600)
        cups = 6 if b < brews - 1 else rng.randint(3, 6)
        for c in range(cups):
            kind = rng.choice(("pour", "pour", "lift_pour"))
            actions.append(Action(round(t), kind, 20.0 if kind == "lift_pour" else 0.0))
            if rng.random() < 0.15:
                actions.append(Action(round(t) + 300, "remove", 40.0))
            t += rng.uniform(600, (slot - 1500) / max(cups, 1))
    return [Action(float(round(a.at / 5) * 5), a.action, a.duration) for a in actions]


def match_events(found: Sequence[CoffeeEvent], truth: Sequence[CoffeeEvent], tolerance: float = 30.0) -> dict[str, float]:
    """Greedy one-to-one matching on name within ``tolerance`` seconds; precision, recall and F1."""
    used = [False] * len(found)
    tp = 0
    for ev in truth:
        best = None
        for j, f in enumerate(found):
            if used[j] or f.event != ev.event or abs(f.t - ev.t) > tolerance:
                continue
            if best is None or abs(f.t - ev.t) < abs(found[best].t - ev.t):
                best = j
        if best is not None:
            used[best] = True
            tp += 1
    precision = tp / len(found) if found else (1.0 if not truth else 0.0)
    recall = tp / len(truth) if truth else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"tp": tp, "found": len(found), "truth": len(truth), "precision": precision, "recall": recall, "f1": f1}
