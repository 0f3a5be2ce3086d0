"""Rule language for complex events.

One rule per line::

    complex window_opened <= co2_FALL(a) & temp_FALL(b) & t(a) < t(b) & dist(a,b) < 5

Body items are joined with ``&``. Event patterns ``evt(var)`` come first,
followed by any of ``t(a) < t(b)``, ``val(a) <op> num``, ``dist(a,b) < num``,
``samecrate(a,b)`` and ``span < num`` (seconds between first and last fact).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from ..core import PlatformError

COMPARISONS = ("<=", ">=", "<", ">")


class RuleSyntaxError(PlatformError, SyntaxError):
    def __init__(self, msg: str, line: int = 1, column: int = 1, text: str = ""):
        super().__init__(f"{msg} (line {line}, column {column})")
        self.msg = msg
        self.lineno = line
        self.offset = column
        self.text = text


@dataclass(frozen=True)
class Term:
    event: str
    var: str


@dataclass(frozen=True)
class Before:
    a: str
    b: str


@dataclass(frozen=True)
class ValueCmp:
    var: str
    op: str
    threshold: float


@dataclass(frozen=True)
class Dist:
    a: str
    b: str
    limit: float


@dataclass(frozen=True)
class SameCrate:
    a: str
    b: str


@dataclass(frozen=True)
class Span:
    limit: float


Constraint = Union[Before, ValueCmp, Dist, SameCrate, Span]


def constraint_vars(c: Constraint) -> tuple[str, ...]:
    if isinstance(c, (Before, Dist, SameCrate)):
        return (c.a, c.b)
    if isinstance(c, ValueCmp):
        return (c.var,)
    return ()


@dataclass(frozen=True)
class Rule:
    rule_id: str
    output: str
    terms: tuple[Term, ...]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("rule needs at least one event term")
        names = [t.var for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable in {names}")
        for c in self.constraints:
            for v in constraint_vars(c):
                if v not in names:
                    raise ValueError(f"constraint references undeclared variable {v!r}")

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(t.var for t in self.terms)

    @property
    def span(self) -> float | None:
        limits = [c.limit for c in self.constraints if isinstance(c, Span)]
        return min(limits) if limits else None


# -- tokenizer ----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<num>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.\-]*)
  | (?P<op><=|>=|<|>)
  | (?P<punct>[(),&])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(line: str, lineno: int) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {line[pos]!r}", lineno, pos + 1, line)
        kind = m.lastgroup or ""
        if kind != "ws":
            out.append(_Tok(kind, m.group(), pos + 1))
        pos = m.end()
    out.append(_Tok("end", "", len(line) + 1))
    return out


class _Parser:
    def __init__(self, line: str, lineno: int):
        self.line = line
        self.lineno = lineno
        self.toks = _tokenize(line, lineno)
        self.i = 0

    def fail(self, msg: str, tok: _Tok | None = None) -> RuleSyntaxError:
        tok = tok or self.toks[self.i]
        return RuleSyntaxError(msg, self.lineno, tok.col, self.line)

    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            got = tok.text or "end of line"
            raise self.fail(f"expected {want!r}, got {got!r}")
        self.i += 1
        return tok

    def number(self) -> float:
        return float(self.take("num").text)

    def parse(self, rule_id: str | None) -> Rule:
        self.take("ident", "complex")
        name = self.take("ident").text
        self.take("op", "<=")
        if self.peek().kind == "end":
            raise self.fail("rule body is empty")
        terms: list[Term] = []
        constraints: list[Constraint] = []
        while True:
            self.item(terms, constraints)
            if self.peek().kind == "end":
                break
            self.take("punct", "&")
        declared = {t.var for t in terms}
        for c in constraints:
            for v in constraint_vars(c):
                if v not in declared:
                    raise RuleSyntaxError(f"undeclared variable {v!r}", self.lineno, 1, self.line)
        if not terms:
            raise RuleSyntaxError("rule has no event terms", self.lineno, 1, self.line)
        return Rule(rule_id or name, name, tuple(terms), tuple(constraints))

    def _var(self) -> str:
        self.take("punct", "(")
        v = self.take("ident").text
        self.take("punct", ")")
        return v

    def _pair(self) -> tuple[str, str]:
        self.take("punct", "(")
        a = self.take("ident").text
        self.take("punct", ",")
        b = self.take("ident").text
        self.take("punct", ")")
        return a, b

    def item(self, terms: list[Term], constraints: list[Constraint]) -> None:
        head = self.peek()
        if head.kind != "ident":
            raise self.fail(f"expected a pattern or constraint, got {head.text or 'end of line'!r}")
        word = head.text
        nxt = self.peek(1)
        if word == "span" and nxt.kind == "op":
            self.i += 1
            self.take("op", "<")
            constraints.append(Span(self.number()))
            return
        if word == "t" and nxt.text == "(":
            self.i += 1
            a = self._var()
            self.take("op", "<")
            self.take("ident", "t")
            constraints.append(Before(a, self._var()))
            return
        if word == "val" and nxt.text == "(":
            self.i += 1
            v = self._var()
            op = self.take("op").text
            constraints.append(ValueCmp(v, op, self.number()))
            return
        if word == "dist" and nxt.text == "(":
            self.i += 1
            a, b = self._pair()
            self.take("op", "<")
            constraints.append(Dist(a, b, self.number()))
            return
        if word == "samecrate" and nxt.text == "(":
            self.i += 1
            constraints.append(SameCrate(*self._pair()))
            return
        if constraints:
            raise self.fail("event patterns must come before constraints")
        self.i += 1
        var = self._var()
        if any(t.var == var for t in terms):
            raise self.fail(f"variable {var!r} bound twice", head)
        terms.append(Term(word, var))


def parse_rule(text: str, rule_id: str | None = None, lineno: int = 1) -> Rule:
    line = text.strip()
    return _Parser(line, lineno).parse(rule_id)


def parse_rules(text: str) -> list[Rule]:
    """Parse a rule file; blank lines and ``#`` comments are skipped.

    Rule ids are ``<name>`` or, for repeated names, ``<name>#<n>``.
    """
    rules: list[Rule] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rule = parse_rule(stripped, lineno=lineno)
        n = seen.get(rule.output, 0)
        seen[rule.output] = n + 1
        if n:
            rule = Rule(f"{rule.output}#{n + 1}", rule.output, rule.terms, rule.constraints)
        rules.append(rule)
    return rules


def load_rules(path: str) -> list[Rule]:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def _items(rule: Rule) -> Iterator[str]:
    for t in rule.terms:
        yield f"{t.event}({t.var})"
    for c in rule.constraints:
        if isinstance(c, Before):
            yield f"t({c.a}) < t({c.b})"
        elif isinstance(c, ValueCmp):
            yield f"val({c.var}) {c.op} {_num(c.threshold)}"
        elif isinstance(c, Dist):
            yield f"dist({c.a},{c.b}) < {_num(c.limit)}"
        elif isinstance(c, SameCrate):
            yield f"samecrate({c.a},{c.b})"
        else:
            yield f"span < {_num(c.limit)}"


def format_rule(rule: Rule) -> str:
    return f"complex {rule.output} <= " + " & ".join(_items(rule))
