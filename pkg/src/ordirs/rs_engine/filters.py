"""Filter expressions: the parsed form of one atomic retrieval requirement.

Grammar (keywords are upper case, strings double-quoted)::

    filter  := or
    or      := and ( "OR" and )*
    and     := not ( "AND" not )*
    not     := [ "NOT" ] atom
    atom    := "(" filter ")" | "LABEL(" string ")" | "SEM(" string ")" | spred
    spred   := KIND "(" args ")"
    anchor  := "ANCHOR(" filter ")" | "ZONE(" string ")"

Spatial argument lists::

    LEFT_OF | RIGHT_OF | ABOVE | BELOW | NEARER_THAN | FARTHER_THAN  (anchor)
    WITHIN_PX                                                        (radius, anchor)
    OVERLAPS                                                         ([tau,] anchor)
    NEAREST_K | FARTHEST_K                                           (k [, anchor])
    LARGEST_K                                                        (k)

Without an anchor, NEAREST_K/FARTHEST_K rank by mean depth. ANCHOR may nest
at most two levels deep. The language is deliberately closed: it can only
name labels, yes/no questions about descriptions, and catalogued geometry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from ordirs.errors import FilterSyntaxError, InputError
from ordirs.spatial import PredicateKind, SpatialPredicate

MAX_ANCHOR_DEPTH = 2


@dataclass(frozen=True)
class Label:
    text: str


@dataclass(frozen=True)
class Sem:
    question: str


@dataclass(frozen=True)
class Anchor:
    filter: "Node"


@dataclass(frozen=True)
class ZoneRef:
    name: str


@dataclass(frozen=True)
class Spatial:
    predicate: SpatialPredicate
    anchor: Anchor | ZoneRef | None = None

    @property
    def kind(self) -> PredicateKind:
        return self.predicate.kind


@dataclass(frozen=True)
class Not:
    child: "Node"


@dataclass(frozen=True)
class And:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Node", ...]


Node = Union[Label, Sem, Spatial, Not, And, Or]
Atom = Union[Label, Sem, Spatial]

# ---------------------------------------------------------------- tokens

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>")
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
    """,
    re.X,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    value: object
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    while i < len(text):
        m = _TOKEN.match(text, i)
        if not m:
            raise FilterSyntaxError(f"unexpected character {text[i]!r}", i, text)
        kind = m.lastgroup
        if kind == "ws":
            i = m.end()
            continue
        if kind == "string":
            value, end = _read_string(text, i)
            toks.append(_Tok("string", value, i))
            i = end
            continue
        raw = m.group()
        if kind == "number":
            value: object = float(raw) if any(c in raw for c in ".eE") else int(raw)
        else:
            value = raw
        toks.append(_Tok(kind, value, i))
        i = m.end()
    toks.append(_Tok("eof", None, len(text)))
    return toks


def _read_string(text: str, start: int) -> tuple[str, int]:
    out = []
    i = start + 1
    while i < len(text):
        c = text[i]
        if c == "\\":
            if i + 1 >= len(text) or text[i + 1] not in '"\\':
                raise FilterSyntaxError("invalid escape in string", i, text)
            out.append(text[i + 1])
            i += 2
        elif c == '"':
            return "".join(out), i + 1
        else:
            out.append(c)
            i += 1
    raise FilterSyntaxError("unterminated string", start, text)


# ---------------------------------------------------------------- parser

_ANCHOR_ONLY = {
    PredicateKind.LEFT_OF,
    PredicateKind.RIGHT_OF,
    PredicateKind.ABOVE,
    PredicateKind.BELOW,
    PredicateKind.NEARER_THAN,
    PredicateKind.FARTHER_THAN,
}
_KINDS = {k.value: k for k in PredicateKind}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.anchor_depth = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, pos: int | None = None) -> FilterSyntaxError:
        return FilterSyntaxError(msg, self.tok.pos if pos is None else pos, self.text)

    def take(self, kind: str, value: object = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (value is not None and t.value != value):
            want = value if value is not None else kind
            got = "end of input" if t.kind == "eof" else repr(t.value)
            raise self.error(f"expected {want}, found {got}")
        self.i += 1
        return t

    def at_keyword(self, word: str) -> bool:
        return self.tok.kind == "ident" and self.tok.value == word

    def parse(self) -> Node:
        node = self.or_()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.value!r}")
        return node

    def or_(self) -> Node:
        items = [self.and_()]
        while self.at_keyword("OR"):
            self.i += 1
            items.append(self.and_())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_(self) -> Node:
        items = [self.not_()]
        while self.at_keyword("AND"):
            self.i += 1
            items.append(self.not_())
        return items[0] if len(items) == 1 else And(tuple(items))

    def not_(self) -> Node:
        if self.at_keyword("NOT"):
            self.i += 1
            return Not(self.atom())
        return self.atom()

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "lparen":
            self.i += 1
            inner = self.or_()
            self.take("rparen")
            return inner
        if t.kind != "ident":
            got = "end of input" if t.kind == "eof" else repr(t.value)
            raise self.error(f"expected a filter atom, found {got}")
        if t.value in ("LABEL", "SEM"):
            self.i += 1
            self.take("lparen")
            s = self.take("string")
            if not s.value.strip():
                raise self.error(f"{t.value} text must not be empty", s.pos)
            self.take("rparen")
            return Label(s.value) if t.value == "LABEL" else Sem(s.value)
        if t.value in _KINDS:
            return self.spred()
        if t.value in ("ANCHOR", "ZONE"):
            raise self.error(f"{t.value} is only legal as a spatial predicate argument")
        raise self.error(f"unknown keyword {t.value!r}")

    def spred(self) -> Spatial:
        name = self.take("ident")
        kind = _KINDS[name.value]
        paren = self.take("lparen")
        args: list[tuple[object, int]] = []
        if self.tok.kind != "rparen":
            args.append(self.arg())
            while self.tok.kind == "comma":
                self.i += 1
                args.append(self.arg())
        self.take("rparen")
        return self.check_signature(kind, args, paren.pos)

    def arg(self) -> tuple[object, int]:
        t = self.tok
        if t.kind == "number":
            self.i += 1
            return t.value, t.pos
        if self.at_keyword("ANCHOR"):
            if self.anchor_depth >= MAX_ANCHOR_DEPTH:
                raise self.error(f"ANCHOR nested deeper than {MAX_ANCHOR_DEPTH}")
            self.i += 1
            self.take("lparen")
            self.anchor_depth += 1
            inner = self.or_()
            self.anchor_depth -= 1
            self.take("rparen")
            return Anchor(inner), t.pos
        if self.at_keyword("ZONE"):
            self.i += 1
            self.take("lparen")
            s = self.take("string")
            self.take("rparen")
            return ZoneRef(s.value), t.pos
        got = "end of input" if t.kind == "eof" else repr(t.value)
        raise self.error(f"expected a number, ANCHOR(...) or ZONE(...), found {got}")

    def check_signature(self, kind: PredicateKind, args: list[tuple[object, int]], paren: int) -> Spatial:
        nums = [(v, p) for v, p in args if isinstance(v, (int, float))]
        anchors = [(v, p) for v, p in args if isinstance(v, (Anchor, ZoneRef))]
        shape = "".join("n" if isinstance(v, (int, float)) else "a" for v, _ in args)

        if kind in _ANCHOR_ONLY:
            allowed = {"a"}
        elif kind is PredicateKind.WITHIN_PX:
            allowed = {"na"}
        elif kind is PredicateKind.OVERLAPS:
            allowed = {"a", "na"}
        elif kind is PredicateKind.LARGEST_K:
            allowed = {"n"}
        else:
            allowed = {"n", "na"}
        if shape not in allowed:
            sig = " | ".join(sorted({_SIG[s] for s in allowed}))
            raise FilterSyntaxError(f"{kind.value} takes ({sig}), got {len(args)} argument(s)", paren, self.text)

        anchor = anchors[0][0] if anchors else None
        try:
            if kind is PredicateKind.WITHIN_PX:
                pred = SpatialPredicate(kind, radius=nums[0][0])
            elif kind is PredicateKind.OVERLAPS:
                pred = SpatialPredicate(kind, tau=nums[0][0] if nums else None)
            elif kind.is_ranking:
                k = nums[0][0]
                if not isinstance(k, int):
                    raise InputError(f"{kind.value} k must be an integer, got {k!r}")
                pred = SpatialPredicate(kind, k=k)
            else:
                pred = SpatialPredicate(kind)
        except InputError as exc:
            raise FilterSyntaxError(str(exc), nums[0][1] if nums else paren, self.text) from None
        return Spatial(pred, anchor)


_SIG = {"a": "anchor", "n": "number", "na": "number, anchor"}


def parse_filter(text: str) -> Node:
    """Parse filter text into an AST, raising :class:`FilterSyntaxError` with an offset."""
    return _Parser(text).parse()


# ---------------------------------------------------------------- printer


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _num(v: int | float) -> str:
    return repr(v)


def format_filter(node: Node) -> str:
    """Canonical text; ``parse_filter(format_filter(n)) == n`` for every tree."""
    if isinstance(node, Label):
        return f"LABEL({_quote(node.text)})"
    if isinstance(node, Sem):
        return f"SEM({_quote(node.question)})"
    if isinstance(node, Spatial):
        p = node.predicate
        args: list[str] = []
        if p.kind is PredicateKind.WITHIN_PX:
            args.append(_num(p.radius))
        elif p.kind is PredicateKind.OVERLAPS and p.tau is not None:
            args.append(_num(p.tau))
        elif p.kind.is_ranking:
            args.append(_num(p.k))
        if isinstance(node.anchor, Anchor):
            args.append(f"ANCHOR({format_filter(node.anchor.filter)})")
        elif isinstance(node.anchor, ZoneRef):
            args.append(f"ZONE({_quote(node.anchor.name)})")
        return f"{p.kind.value}({', '.join(args)})"
    if isinstance(node, Not):
        inner = format_filter(node.child)
        return f"NOT ({inner})" if isinstance(node.child, (And, Or, Not)) else f"NOT {inner}"
    if isinstance(node, And):
        return " AND ".join(
            f"({format_filter(c)})" if isinstance(c, (And, Or)) else format_filter(c) for c in node.children
        )
    if isinstance(node, Or):
        return " OR ".join(f"({format_filter(c)})" if isinstance(c, Or) else format_filter(c) for c in node.children)
    raise TypeError(f"not a filter node: {node!r}")


# ---------------------------------------------------------------- walkers


def top_level_atoms(node: Node) -> Iterator[Atom]:
    """Atoms of the expression itself, not descending into anchor filters."""
    if isinstance(node, (Label, Sem, Spatial)):
        yield node
    elif isinstance(node, Not):
        yield from top_level_atoms(node.child)
    elif isinstance(node, (And, Or)):
        for c in node.children:
            yield from top_level_atoms(c)


def all_atoms(node: Node) -> Iterator[Atom]:
    for atom in top_level_atoms(node):
        yield atom
        if isinstance(atom, Spatial) and isinstance(atom.anchor, Anchor):
            yield from all_atoms(atom.anchor.filter)


def anchor_depth(node: Node) -> int:
    depth = 0
    for atom in top_level_atoms(node):
        if isinstance(atom, Spatial) and isinstance(atom.anchor, Anchor):
            depth = max(depth, 1 + anchor_depth(atom.anchor.filter))
    return depth
