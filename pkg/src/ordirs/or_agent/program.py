"""Closed analysis language over per-frame series.

A program is a list of ``name = OP(args)`` statements followed by one
``OUTPUT a, b`` line::

    opened = THRESHOLD(presence, 0.5)
    openings = RISING_EDGES(opened)
    OUTPUT openings

Arguments are numbers, earlier names, nested calls, the built-in ``fps`` or
series names: ``presence``, ``area``, ``count``, ``centroid_x``,
``centroid_y`` for the sub-query's own masks and ``q2.presence`` style
references to another sub-query. Numeric series are read as booleans
(non-zero is true) wherever a boolean series is expected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ordirs.errors import ConfigError, ProgramError

BASE_SERIES = ("presence", "area", "count", "centroid_x", "centroid_y")

SERIES, EVENTS, INDEX, NUMBER, DURATIONS = "series", "events", "index", "number", "durations"

# op -> (argument kinds, result kind); NUMBER args also accept INDEX where noted below
SIGNATURES: dict[str, tuple[tuple[str, ...], str]] = {
    "THRESHOLD": ((SERIES, NUMBER), SERIES),
    "RISING_EDGES": ((SERIES,), EVENTS),
    "FALLING_EDGES": ((SERIES,), EVENTS),
    "FIRST_TRUE": ((SERIES,), INDEX),
    "LAST_TRUE": ((SERIES,), INDEX),
    "COUNT_TRUE": ((SERIES,), NUMBER),
    "DURATIONS": ((SERIES,), DURATIONS),
    "RATE": ((EVENTS, NUMBER), NUMBER),
    "BETWEEN": ((INDEX, INDEX), NUMBER),
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Call:
    op: str
    args: tuple[Any, ...]


@dataclass(frozen=True)
class Statement:
    name: str
    expr: Call
    line: int


@dataclass(frozen=True)
class AnalysisProgram:
    statements: tuple[Statement, ...]
    outputs: tuple[str, ...]
    text: str

    def series_refs(self) -> set[str]:
        """Every series name the program reads."""
        out: set[str] = set()

        def walk(e: Any) -> None:
            if isinstance(e, Call):
                for a in e.args:
                    walk(a)
            elif isinstance(e, Ref) and (e.name in BASE_SERIES or "." in e.name):
                out.add(e.name)

        for s in self.statements:
            walk(s.expr)
        return out


_TOKEN = re.compile(r"\s*(?:(?P<num>-?\d+(?:\.\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)?)|(?P<op>[(),=]))")
_NAME = re.compile(r"[a-z_][a-z0-9_]*\Z")


def _tokens(text: str, line: int) -> list[tuple[str, str]]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ProgramError(f"unexpected character {text[pos:].strip()[:1]!r}", line)
        kind = m.lastgroup
        out.append((kind, m.group(kind)))  # type: ignore[arg-type]
        pos = m.end()
    return out


class _ExprParser:
    def __init__(self, toks: list[tuple[str, str]], line: int):
        self.toks, self.i, self.line = toks, 0, line

    def peek(self) -> tuple[str, str] | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, value: str | None = None) -> tuple[str, str]:
        tok = self.peek()
        if tok is None or (value is not None and tok[1] != value):
            raise ProgramError(f"expected {value or 'a value'}, found {tok[1] if tok else 'end of line'}", self.line)
        self.i += 1
        return tok

    def expr(self) -> Any:
        kind, value = self.take()
        if kind == "num":
            return Num(float(value))
        if kind != "name":
            raise ProgramError(f"unexpected {value!r}", self.line)
        if self.peek() == ("op", "("):
            self.take("(")
            args = []
            if self.peek() != ("op", ")"):
                args.append(self.expr())
                while self.peek() == ("op", ","):
                    self.take(",")
                    args.append(self.expr())
            self.take(")")
            return Call(value, tuple(args))
        return Ref(value)


def parse_program(text: str) -> AnalysisProgram:
    """Parse without checking names or types (see :func:`validate_program`)."""
    statements: list[Statement] = []
    outputs: tuple[str, ...] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if outputs is not None:
            raise ProgramError("OUTPUT must be the last statement", lineno)
        if line.startswith("OUTPUT"):
            names = [n.strip() for n in line[len("OUTPUT"):].split(",")]
            if not names or not all(_NAME.match(n) for n in names):
                raise ProgramError("OUTPUT needs a comma-separated list of names", lineno)
            outputs = tuple(names)
            continue
        toks = _tokens(line, lineno)
        if len(toks) < 3 or toks[0][0] != "name" or toks[1] != ("op", "="):
            raise ProgramError("statements have the form name = OP(args)", lineno)
        name = toks[0][1]
        if not _NAME.match(name):
            raise ProgramError(f"invalid name {name!r}: use lower-case letters, digits and underscores", lineno)
        p = _ExprParser(toks[2:], lineno)
        expr = p.expr()
        if p.peek() is not None:
            raise ProgramError(f"unexpected {p.peek()[1]!r} after expression", lineno)  # type: ignore[index]
        if not isinstance(expr, Call):
            raise ProgramError("the right-hand side must be an operator call", lineno)
        statements.append(Statement(name, expr, lineno))
    if outputs is None:
        raise ProgramError("program has no OUTPUT line", None)
    return AnalysisProgram(tuple(statements), outputs, text)


def validate_program(program: AnalysisProgram, known_subqueries: Sequence[str] = ()) -> dict[str, str]:
    """Check names, arities and kinds; returns the kind of every defined name."""
    kinds: dict[str, str] = {}

    def kind_of(e: Any, line: int) -> str:
        if isinstance(e, Num):
            return NUMBER
        if isinstance(e, Ref):
            if e.name == "fps":
                return NUMBER
            if e.name in BASE_SERIES:
                return SERIES
            if "." in e.name:
                sub, series = e.name.split(".", 1)
                if sub not in known_subqueries:
                    raise ProgramError(f"unknown sub-query {sub!r} in {e.name!r}", line)
                if series not in BASE_SERIES:
                    raise ProgramError(f"unknown series {series!r} in {e.name!r}", line)
                return SERIES
            if e.name not in kinds:
                raise ProgramError(f"undefined name {e.name!r}", line)
            return kinds[e.name]
        if e.op not in SIGNATURES:
            raise ProgramError(f"unknown operator {e.op!r}", line)
        params, result = SIGNATURES[e.op]
        if len(e.args) != len(params):
            raise ProgramError(f"{e.op} takes {len(params)} argument(s), got {len(e.args)}", line)
        for i, (arg, want) in enumerate(zip(e.args, params), start=1):
            got = kind_of(arg, line)
            if got != want:
                raise ProgramError(f"{e.op} argument {i} must be {want}, got {got}", line)
        return result

    for s in program.statements:
        if s.name in kinds or s.name in BASE_SERIES or s.name == "fps":
            raise ProgramError(f"name {s.name!r} is already defined", s.line)
        kinds[s.name] = kind_of(s.expr, s.line)
    for name in program.outputs:
        if name not in kinds:
            raise ProgramError(f"OUTPUT names undefined {name!r}", None)
        if kinds[name] == SERIES:
            raise ProgramError(f"OUTPUT {name!r} is a series; reduce it with an operator first", None)
    return kinds


# -- series operators (positions are 0-based within the analysed range) -----


def as_bool(series: Sequence[float]) -> list[bool]:
    return [bool(v) and not (isinstance(v, float) and math.isnan(v)) for v in series]


def threshold(series: Sequence[float], tau: float) -> list[bool]:
    """Strictly greater than ``tau``; NaN is false."""
    return [v > tau for v in series]


def rising_edges(series: Sequence[float]) -> list[int]:
    """Positions where the series turns true; a true first value counts as an edge."""
    b = as_bool(series)
    return [t for t in range(len(b)) if b[t] and (t == 0 or not b[t - 1])]


def falling_edges(series: Sequence[float]) -> list[int]:
    """Positions where the series turns false."""
    b = as_bool(series)
    return [t for t in range(1, len(b)) if b[t - 1] and not b[t]]


def first_true(series: Sequence[float]) -> int | None:
    return next((t for t, v in enumerate(as_bool(series)) if v), None)


def last_true(series: Sequence[float]) -> int | None:
    b = as_bool(series)
    return next((t for t in range(len(b) - 1, -1, -1) if b[t]), None)


def count_true(series: Sequence[float]) -> int:
    return sum(as_bool(series))


def durations(series: Sequence[float]) -> list[int]:
    """Lengths of maximal true runs, in order."""
    out, run = [], 0
    for v in as_bool(series):
        if v:
            run += 1
        elif run:
            out.append(run)
            run = 0
    if run:
        out.append(run)
    return out


def rate(events: Sequence[int], n_frames: int, fps: float) -> float:
    """Events per second over the analysed span."""
    return len(events) / (n_frames / fps)


@dataclass
class ProgramOutput:
    metrics: dict[str, Any]
    key_positions: list[int]
    position_metrics: tuple[str, ...] = ()  # metrics holding positions (or lists of them)


def eval_analysis_program(
    program: AnalysisProgram,
    series: Mapping[str, Sequence[float]],
    fps: float,
    known_subqueries: Sequence[str] = (),
) -> ProgramOutput:
    """Evaluate ``program`` over equal-length series.

    Frame-valued results are positions in ``[0, T)``. Events report their
    count under the output name and positions under ``<name>_frames``;
    BETWEEN and DURATIONS add a ``<name>_seconds`` companion.
    """
    if not fps or fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    kinds = validate_program(program, known_subqueries)
    lengths = {len(v) for v in series.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise ProgramError(f"series must share one non-zero length, got {sorted(lengths)}", None)
    T = lengths.pop()
    env: dict[str, Any] = {}
    spans: dict[str, list[int]] = {}  # defining positions per name

    def ev(e: Any) -> tuple[Any, list[int]]:
        if isinstance(e, Num):
            return e.value, []
        if isinstance(e, Ref):
            if e.name == "fps":
                return fps, []
            if e.name in env:
                return env[e.name], spans[e.name]
            if e.name not in series:
                raise ProgramError(f"series {e.name!r} is not available", None)
            return list(series[e.name]), []
        vals, keys = zip(*(ev(a) for a in e.args)) if e.args else ((), ())
        key = [k for ks in keys for k in ks]
        op = e.op
        if op == "THRESHOLD":
            return threshold(vals[0], vals[1]), key
        if op in ("RISING_EDGES", "FALLING_EDGES"):
            ev_ = rising_edges(vals[0]) if op == "RISING_EDGES" else falling_edges(vals[0])
            return ev_, ev_
        if op in ("FIRST_TRUE", "LAST_TRUE"):
            pos = first_true(vals[0]) if op == "FIRST_TRUE" else last_true(vals[0])
            return pos, [] if pos is None else [pos]
        if op == "COUNT_TRUE":
            return count_true(vals[0]), []
        if op == "DURATIONS":
            return durations(vals[0]), []
        if op == "RATE":
            if vals[1] <= 0:
                raise ConfigError(f"RATE needs a positive fps, got {vals[1]}")
            return rate(vals[0], T, vals[1]), key
        if op == "BETWEEN":
            a, b = vals
            return (None if a is None or b is None else b - a), key
        raise ProgramError(f"unknown operator {op!r}", None)  # unreachable after validation

    for s in program.statements:
        env[s.name], spans[s.name] = ev(s.expr)

    metrics: dict[str, Any] = {}
    key_positions: set[int] = set()
    positional: list[str] = []
    for name in program.outputs:
        value, kind = env[name], kinds[name]
        key_positions.update(spans[name])
        if kind == EVENTS:
            metrics[name] = len(value)
            metrics[f"{name}_frames"] = list(value)
            positional.append(f"{name}_frames")
        elif kind == DURATIONS:
            metrics[name] = list(value)
            metrics[f"{name}_seconds"] = [d / fps for d in value]
        elif _is_between(program, name):
            metrics[name] = value
            metrics[f"{name}_seconds"] = None if value is None else value / fps
        else:
            metrics[name] = value
            if kind == INDEX:
                positional.append(name)
    return ProgramOutput(metrics, sorted(key_positions), tuple(positional))


def _is_between(program: AnalysisProgram, name: str) -> bool:
    return any(s.name == name and s.expr.op == "BETWEEN" for s in program.statements)
