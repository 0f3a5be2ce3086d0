from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cep_oracle import random_rule
from sensorplane.cep import RuleSyntaxError, format_rule, load_rules, parse_rule, parse_rules
from sensorplane.cep.rules import Before, Dist, Rule, Span, Term, ValueCmp
from sensorplane.fixtures import path as fixture_path


def test_window_opened_example():
    r = parse_rule("complex window_opened <= co2_FALL(a) & temp_FALL(b) & t(a) < t(b) & dist(a,b) < 5")
    assert r.output == "window_opened" and r.rule_id == "window_opened"
    assert r.terms == (Term("co2_FALL", "a"), Term("temp_FALL", "b"))
    assert r.constraints == (Before("a", "b"), Dist("a", "b", 5.0))


def test_value_and_span_items():
    r = parse_rule("complex x <= e(a) & val(a) >= -2.5 & span < 30")
    assert r.constraints == (ValueCmp("a", ">=", -2.5), Span(30.0)) and r.span == 30.0


@pytest.mark.parametrize(
    "text, col",
    [
        ("complex empty <=", 17),
        ("complex empty <=   ", 17),
        ("complex r <= a(x) &", 20),
        ("complex r <= a(x) & t(x) < t(y)", 1),
        ("complex r <= a(x) & a(x)", 21),
        ("complex r <= a(x) & t(x) < t(x) & b(y)", 35),
        ("complex r <= a(x) $ b(y)", 19),
        ("simple r <= a(x)", 1),
    ],
)
def test_syntax_errors_have_position(text, col):
    with pytest.raises(RuleSyntaxError) as ei:
        parse_rule(text, lineno=4)
    assert ei.value.lineno == 4 and ei.value.offset == col
    assert isinstance(ei.value, SyntaxError)


def test_file_errors_report_line():
    with pytest.raises(RuleSyntaxError) as ei:
        parse_rules("# header\n\ncomplex ok <= a(x)\ncomplex bad <= \n")
    assert ei.value.lineno == 4


def test_repeated_names_get_distinct_ids():
    rules = parse_rules("complex r <= a(x)\ncomplex r <= b(x)\ncomplex r <= c(x)")
    assert [r.rule_id for r in rules] == ["r", "r#2", "r#3"] and {r.output for r in rules} == {"r"}


def test_bundled_rule_file():
    rules = load_rules(fixture_path("wgb.rules"))
    assert [r.output for r in rules] == ["window_opened", "room_filling", "coffee_break"]


def test_rule_invariants():
    with pytest.raises(ValueError):
        Rule("r", "r", ())
    with pytest.raises(ValueError):
        Rule("r", "r", (Term("a", "x"),), (Before("x", "y"),))


def test_round_trip_generated_rules():
    rng = random.Random(42)
    for i in range(100):
        rule = random_rule(rng, f"g{i}", rng.choice((1, 2, 3)) if i % 10 else 3)
        text = format_rule(rule)
        again = parse_rule(text)
        assert format_rule(again) == text
        assert (again.terms, again.constraints) == (rule.terms, rule.constraints)


@given(st.floats(-1e6, 1e6, allow_nan=False), st.sampled_from(("<", "<=", ">", ">=")))
def test_round_trip_thresholds(th, op):
    rule = Rule("r", "r", (Term("e", "a"),), (ValueCmp("a", op, th),))
    assert parse_rule(format_rule(rule)).constraints == rule.constraints
