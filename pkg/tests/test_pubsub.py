from __future__ import annotations

import itertools
import random
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sensorplane.pubsub import (
    Broker,
    BrokerDown,
    BridgeConfig,
    DuplicateBridge,
    InvalidFilter,
    InvalidTopic,
    bridge,
    load_bridges,
    topic_matches,
)

SEGS = ["a", "b", "co2", "csn"]
topics = st.lists(st.sampled_from(SEGS), min_size=1, max_size=4).map("/".join)
filters = st.lists(st.sampled_from([*SEGS, "+"]), min_size=1, max_size=4).flatmap(
    lambda segs: st.booleans().map(lambda tail: "/".join(segs + (["#"] if tail else []))) if len(segs) < 4
    else st.just("/".join(segs))
)


def filter_regex(flt: str) -> re.Pattern[str]:
    """Independent reading of the MQTT rules: '+' is one level, a trailing '#'
    is zero or more further levels (so 'a/#' also matches 'a')."""
    segs = flt.split("/")
    tail = segs[-1] == "#"
    body = segs[:-1] if tail else segs
    parts = ["[^/]+" if s == "+" else re.escape(s) for s in body]
    pattern = "/".join(parts)
    if tail:
        pattern = ".+" if not parts else pattern + "(/.+)?"
    return re.compile(f"^{pattern}$")


def test_single_exact_subscriber():
    b = Broker("local")
    sub = b.subscribe("csn/status/tele/POWER")
    assert b.publish("csn/status/tele/POWER", b"{}") == 1
    assert sub.drain() == [("csn/status/tele/POWER", b"{}")]


def test_multi_level_wildcard():
    b = Broker("local")
    sub = b.subscribe("csn/#")
    b.publish("csn/a", "1")
    b.publish("csn/a/b", "2")
    b.publish("other/a", "3")
    assert [t for t, _ in sub.drain()] == ["csn/a", "csn/a/b"]


def test_single_level_wildcard():
    assert topic_matches("+/co2", "room1/co2")
    assert not topic_matches("+/co2", "a/b/co2")
    assert topic_matches("#", "anything/at/all")


@given(filters, topics)
def test_filter_matching_oracle(flt, topic):
    assert topic_matches(flt, topic) == bool(filter_regex(flt).match(topic))


def test_filter_matching_enumerated():
    all_topics = ["/".join(p) for n in range(1, 4) for p in itertools.product(SEGS, repeat=n)]
    all_filters = ["/".join(p) for n in range(1, 4) for p in itertools.product([*SEGS[:2], "+"], repeat=n)]
    all_filters += [f + "/#" for f in all_filters if f.count("/") < 2] + ["#"]
    for flt in all_filters:
        rx = filter_regex(flt)
        for t in all_topics:
            assert topic_matches(flt, t) == bool(rx.match(t)), (flt, t)


@pytest.mark.parametrize("topic", ["a/+/b", "a/#", "", "a//b", "/a"])
def test_invalid_topics(topic):
    with pytest.raises(InvalidTopic):
        Broker("x").publish(topic, b"")


@pytest.mark.parametrize("flt", ["a/#/b", "a+/b", "", "a//b", "#x"])
def test_invalid_filters(flt):
    with pytest.raises(InvalidFilter):
        Broker("x").subscribe(flt)


def test_unsubscribe_stops_delivery():
    b = Broker("x")
    sub = b.subscribe("#")
    sub.unsubscribe()
    assert b.publish("a", b"1") == 0
    assert sub.drain() == []


def test_no_replay_for_late_subscribers():
    b = Broker("x")
    b.publish("a", b"early")
    sub = b.subscribe("a")
    b.publish("a", b"late")
    assert sub.drain() == [("a", b"late")]


def test_overflow_drops_oldest_and_counts():
    b = Broker("x", queue_depth=3)
    sub = b.subscribe("t")
    for i in range(5):
        b.publish("t", str(i))
    assert [p for _, p in sub.drain()] == [b"2", b"3", b"4"]
    assert sub.dropped == 2
    assert b.stats()["subscriptions"][0]["dropped"] == 2


def test_slow_listener_does_not_starve_queue_subscribers():
    b = Broker("x")
    seen = []
    b.subscribe("t", listener=lambda t, p: seen.append(p))
    q = b.subscribe("t")
    b.publish("t", b"1")
    assert seen == [b"1"] and q.drain() == [("t", b"1")]


def test_last_will_on_drop_only():
    b = Broker("x")
    wills = b.subscribe("status/#")
    c1 = b.connect("node-1", will_topic="status/node-1", will_payload="offline")
    c1.disconnect()
    c2 = b.connect("node-2", will_topic="status/node-2", will_payload="offline")
    c2.drop()
    assert wills.drain() == [("status/node-2", b"offline")]


def test_broker_down():
    b = Broker("x")
    b.alive = False
    with pytest.raises(BrokerDown):
        b.publish("a", b"")


# -- bridges ---------------------------------------------------------------------


def test_bridge_both_ways_no_echo():
    a, b = Broker("A"), Broker("B")
    bridge(a, b, BridgeConfig("B"))
    sa, sb = a.subscribe("#"), b.subscribe("#")
    a.publish("x/y", b"m")
    assert sb.drain() == [("x/y", b"m")]
    assert sa.drain() == [("x/y", b"m")]
    assert a.stats()["duplicates_suppressed"] == 0


def test_ttn_bridge_into_local():
    ttn, local = Broker("ttn"), Broker("local")
    bridge(local, ttn, BridgeConfig("ttn", ("ttn/#",), "in"))
    sub = local.subscribe("#")
    ttn.publish("ttn/acp/elsys-co2-041ba9/up", b"{}")
    ttn.publish("other/thing", b"{}")
    local.publish("ttn/local/only", b"{}")
    assert [t for t, _ in sub.drain()] == ["ttn/acp/elsys-co2-041ba9/up", "ttn/local/only"]
    assert ttn.stats()["links"][0]["forwarded"] == 1


def test_empty_filter_list_forwards_nothing():
    a, b = Broker("A"), Broker("B")
    bridge(a, b, BridgeConfig("B", ()))
    sub = b.subscribe("#")
    a.publish("a", b"1")
    assert sub.drain() == []


def test_duplicate_bridge_rejected():
    a, b = Broker("A"), Broker("B")
    bridge(a, b, BridgeConfig("B", ("x/#",)))
    with pytest.raises(DuplicateBridge):
        bridge(a, b, BridgeConfig("B", ("x/#",)))
    bridge(a, b, BridgeConfig("B", ("y/#",)))


def test_bridge_needs_live_brokers():
    a, b = Broker("A"), Broker("B")
    b.alive = False
    with pytest.raises(BrokerDown):
        bridge(a, b, BridgeConfig("B"))


def test_closed_bridge_stops_forwarding():
    a, b = Broker("A"), Broker("B")
    br = bridge(a, b, BridgeConfig("B"))
    sub = b.subscribe("#")
    br.close()
    a.publish("a", b"1")
    assert sub.drain() == []
    bridge(a, b, BridgeConfig("B"))


def test_load_bridges_file(tmp_path):
    p = tmp_path / "bridges.json"
    p.write_text('[{"remote": "ttn", "filters": ["ttn/#"], "direction": "in"}]')
    local, ttn = Broker("local"), Broker("ttn")
    [br] = load_bridges(str(p), local, {"ttn": ttn})
    assert br.config == BridgeConfig("ttn", ("ttn/#",), "in")


def test_bad_bridge_direction():
    with pytest.raises(ValueError):
        BridgeConfig("B", ("#",), "sideways")


def reachable(origin: str, topic: str, links: list[tuple[str, str, str]]) -> set[str]:
    """Brokers a publish on ``origin`` should reach: BFS over links whose filter matches."""
    seen, frontier = {origin}, [origin]
    while frontier:
        cur = frontier.pop()
        for src, dst, flt in links:
            if src == cur and dst not in seen and topic_matches(flt, topic):
                seen.add(dst)
                frontier.append(dst)
    return seen


def test_random_topologies_deliver_once_per_reachable_broker():
    rng = random.Random(3)
    for _ in range(200):
        n = rng.randint(2, 5)
        names = [f"B{i}" for i in range(n)]
        brokers = {x: Broker(x) for x in names}
        links: list[tuple[str, str, str]] = []
        for x, y in itertools.combinations(names, 2):
            if rng.random() < 0.6:
                flt = rng.choice(["#", "a/#", "+/x", "b"])
                direction = rng.choice(["in", "out", "both"])
                bridge(brokers[x], brokers[y], BridgeConfig(y, (flt,), direction))
                if direction in ("out", "both"):
                    links.append((x, y, flt))
                if direction in ("in", "both"):
                    links.append((y, x, flt))
        subs = {x: brokers[x].subscribe("#") for x in names}
        for _ in range(5):
            origin, topic = rng.choice(names), rng.choice(["a/x", "b", "a", "c/x"])
            brokers[origin].publish(topic, b"m")
            counts = {x: len(subs[x].drain()) for x in names}
            assert max(counts.values()) == 1
            assert {x for x, c in counts.items() if c} == reachable(origin, topic, links)
