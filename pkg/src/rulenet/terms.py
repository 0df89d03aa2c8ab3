"""Term and quad data model.

Everything the engine touches is a Term. Facts are quads of four terms
(context, subject, predicate, object); rule premises and conclusions are the
same shape with variables allowed. The canonical text rendering defined here
is the single source of truth for ordering, equality-in-tests, wire payloads
and trace files.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

from .errors import TermError

# Literal datatype tags. A deliberately tiny closed set: enough for the DHT
# vocabulary while keeping unification decidable.
STRING = "string"
INTEGER = "integer"
BOOLEAN = "boolean"
HEX = "hex"

_HEX_DIGITS = set("0123456789abcdef")


class Term:
    """Base class for all term kinds."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Iri(Term):
    text: str

    def __post_init__(self):
        if not self.text:
            raise TermError("IRI text must be non-empty")
        if any(c.isspace() for c in self.text) or "<" in self.text or ">" in self.text:
            raise TermError(f"IRI text contains whitespace or angle brackets: {self.text!r}")


@dataclass(frozen=True, slots=True)
class Blank(Term):
    label: str


@dataclass(frozen=True, slots=True)
class Var(Term):
    name: str


@dataclass(frozen=True, slots=True)
class Literal(Term):
    lexical: str
    tag: str

    def __post_init__(self):
        if self.tag == INTEGER:
            if str(int(self.lexical)) != self.lexical:
                raise TermError(f"non-canonical integer literal: {self.lexical!r}")
        elif self.tag == BOOLEAN:
            if self.lexical not in ("true", "false"):
                raise TermError(f"bad boolean literal: {self.lexical!r}")
        elif self.tag == HEX:
            if len(self.lexical) % 2 != 0 or not self.lexical or not set(self.lexical) <= _HEX_DIGITS:
                raise TermError(f"hex literal needs even count of lowercase hex digits: {self.lexical!r}")
        elif self.tag != STRING:
            raise TermError(f"unknown literal tag: {self.tag!r}")


@dataclass(frozen=True, slots=True)
class ListTerm(Term):
    items: Tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class GraphTerm(Term):
    """A quoted graph, held as an opaque value.

    Items are canonicalized (sorted, deduplicated) on construction so that
    structural equality and hashing are insensitive to source order.
    """

    items: Tuple["Quad", ...]

    def __post_init__(self):
        ordered = tuple(sorted(set(self.items), key=lambda q: quad_text(q)))
        object.__setattr__(self, "items", ordered)


@dataclass(frozen=True, slots=True)
class Quad:
    """A (context, subject, predicate, object) tuple.

    Stored facts are ground; the same shape with Vars serves as a pattern.
    """

    ctx: Term
    sub: Term
    pred: Term
    obj: Term

    def slots(self) -> Tuple[Term, Term, Term, Term]:
        return (self.ctx, self.sub, self.pred, self.obj)


@dataclass(frozen=True, slots=True)
class NotExists:
    """Negated sub-pattern: succeeds when the wrapped conjunction has no match."""

    patterns: Tuple[Quad, ...]


# A binding maps variable names to ground terms.
Binding = Dict[str, Term]


# Convenience constructors used throughout the package and its tests.

def integer(value: int) -> Literal:
    return Literal(str(value), INTEGER)


def string(value: str) -> Literal:
    return Literal(value, STRING)


def boolean(value: bool) -> Literal:
    return Literal("true" if value else "false", BOOLEAN)


def hexlit(digits: str) -> Literal:
    return Literal(digits, HEX)


def hex_of(value: int, bits: int) -> Literal:
    """Render an unsigned integer as a fixed-width hex literal."""
    width = bits // 4
    return Literal(format(value, f"0{width}x"), HEX)


# ---------------------------------------------------------------------------
# Canonical text rendering
# ---------------------------------------------------------------------------

def _escape_string(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def term_text(t: Term, blank_placeholder: bool = False) -> str:
    """Render a term in the external syntax.

    With blank_placeholder, blank labels are erased; that form is used as the
    primary sort key so canonical output does not depend on source labels.
    """
    if isinstance(t, Iri):
        return f"<{t.text}>"
    if isinstance(t, Blank):
        return "_:" if blank_placeholder else f"_:{t.label}"
    if isinstance(t, Var):
        return f"?{t.name}"
    if isinstance(t, Literal):
        if t.tag == STRING:
            return f'"{_escape_string(t.lexical)}"'
        if t.tag == HEX:
            return f"0x{t.lexical}"
        return t.lexical
    if isinstance(t, ListTerm):
        return "(" + " ".join(term_text(i, blank_placeholder) for i in t.items) + ")"
    if isinstance(t, GraphTerm):
        inner = " ".join(quad_text(q, blank_placeholder) + " ." for q in t.items)
        return "{ " + inner + " }" if inner else "{ }"
    raise TermError(f"cannot render {t!r}")


def quad_text(q: Quad, blank_placeholder: bool = False) -> str:
    return " ".join(term_text(s, blank_placeholder) for s in q.slots())


def quad_line(q: Quad) -> str:
    """One statement in the external line format: explicit context first."""
    return quad_text(q) + " ."


@functools.lru_cache(maxsize=None)
def sort_key(q: Quad) -> Tuple[str, str]:
    """Canonical ordering key: blank-erased text first, labeled text to break ties."""
    return (quad_text(q, blank_placeholder=True), quad_text(q))


def _collect_blanks(t: Term, out: list):
    if isinstance(t, Blank):
        if t.label not in out:
            out.append(t.label)
    elif isinstance(t, ListTerm):
        for i in t.items:
            _collect_blanks(i, out)
    elif isinstance(t, GraphTerm):
        for q in t.items:
            for s in q.slots():
                _collect_blanks(s, out)


def _rename_term(t: Term, mapping: Dict[str, str]) -> Term:
    if isinstance(t, Blank):
        return Blank(mapping[t.label])
    if isinstance(t, ListTerm):
        return ListTerm(tuple(_rename_term(i, mapping) for i in t.items))
    if isinstance(t, GraphTerm):
        return GraphTerm(tuple(rename_blanks_quad(q, mapping) for q in t.items))
    return t


def rename_blanks_quad(q: Quad, mapping: Dict[str, str]) -> Quad:
    return Quad(*(_rename_term(s, mapping) for s in q.slots()))


def canonical_quads(quads: Iterable[Quad]) -> bytes:
    """Serialize a quad set canonically.

    Quads are sorted by their canonical key, blank nodes are renamed _:b0,
    _:b1, ... in first-occurrence order of the sorted stream, and each quad is
    emitted as one line. Equal quad sets (up to blank renaming) produce
    identical bytes.
    """
    ordered = sorted(set(quads), key=sort_key)
    labels: list = []
    for q in ordered:
        for s in q.slots():
            _collect_blanks(s, labels)
    mapping = {label: f"b{i}" for i, label in enumerate(labels)}
    lines = [quad_line(rename_blanks_quad(q, mapping)) for q in ordered]
    return ("\n".join(lines) + "\n").encode() if lines else b""


# ---------------------------------------------------------------------------
# Groundness, substitution, unification
# ---------------------------------------------------------------------------

def term_vars(t: Term, out: Optional[set] = None) -> set:
    if out is None:
        out = set()
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, ListTerm):
        for i in t.items:
            term_vars(i, out)
    elif isinstance(t, GraphTerm):
        for q in t.items:
            for s in q.slots():
                term_vars(s, out)
    return out


def quad_vars(q: Quad) -> set:
    out: set = set()
    for s in q.slots():
        term_vars(s, out)
    return out


_ATOMIC = (Iri, Blank, Literal)


def is_ground(t: Term) -> bool:
    if isinstance(t, _ATOMIC):
        return True
    return not term_vars(t)


def quad_is_ground(q: Quad) -> bool:
    return (
        is_ground(q.ctx) and is_ground(q.sub) and is_ground(q.pred) and is_ground(q.obj)
    )


def apply_binding(t: Term, binding: Binding) -> Term:
    cls = t.__class__
    if cls is Var:
        return binding.get(t.name, t)
    if cls is ListTerm:
        return ListTerm(tuple(apply_binding(i, binding) for i in t.items))
    if cls is GraphTerm:
        return GraphTerm(tuple(apply_binding_quad(q, binding) for q in t.items))
    return t


def apply_binding_quad(q: Quad, binding: Binding) -> Quad:
    return Quad(
        apply_binding(q.ctx, binding),
        apply_binding(q.sub, binding),
        apply_binding(q.pred, binding),
        apply_binding(q.obj, binding),
    )


def unify_term(pattern: Term, value: Term, binding: Binding) -> Optional[Binding]:
    """Extend binding so that pattern instantiates to value, or return None.

    value is assumed ground. Quoted graphs are opaque: they match only by
    canonical equality (a bare Var still captures a whole graph).
    """
    if pattern is value:
        return binding
    cls = pattern.__class__
    if cls is Var:
        bound = binding.get(pattern.name)
        if bound is None:
            out = dict(binding)
            out[pattern.name] = value
            return out
        return binding if bound == value else None
    if cls is ListTerm:
        if value.__class__ is not ListTerm or len(pattern.items) != len(value.items):
            return None
        out = binding
        for p, v in zip(pattern.items, value.items):
            out = unify_term(p, v, out)
            if out is None:
                return None
        return out
    return binding if pattern == value else None


def unify_quad(pattern: Quad, fact: Quad, binding: Binding) -> Optional[Binding]:
    b = unify_term(pattern.ctx, fact.ctx, binding)
    if b is None:
        return None
    b = unify_term(pattern.sub, fact.sub, b)
    if b is None:
        return None
    b = unify_term(pattern.pred, fact.pred, b)
    if b is None:
        return None
    return unify_term(pattern.obj, fact.obj, b)
