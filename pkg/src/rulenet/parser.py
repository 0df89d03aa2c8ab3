"""Text syntax: lexer, parser and serializer.

The language is a small N3-style subset:

    document  := (directive | block | statement)*
    directive := "@prefix" PNAME ":" IRIREF "."
    block     := "@context" term "{" statement* "}"
    statement := triple "." | quad "." | rule "."
    triple    := term term term            (context from the enclosing block,
                                            tau:default at top level)
    quad      := term term term term       (explicit context written first)
    rule      := graph "=>" graph
    graph     := "{" (triple "." | quad "." | "@not" graph)* "}"
    term      := IRIREF | PNAME ":" NAME | "_:" NAME | "?" NAME | literal
               | "(" term* ")" | graph | "a"
    literal   := STRING | INTEGER | "true" | "false" | HEX

IRIREF is "<" non-space non-angle chars ">"; STRING is double-quoted with \\"
and \\\\ escapes only; INTEGER is an optional "-" then digits; HEX is "0x"
followed by an even count of [0-9a-f]. "a" expands to tau:type. "#" starts a
comment. The prefixes tau: and sim: are pre-declared and cannot be redeclared.

The 4-term statement form is also the canonical line format used for wire
payloads and traces: `<ctx> <subj> <pred> <obj> .`, one statement per line.

Inside rule graphs a 3-term pattern takes the rule's declaration context
(builtin calls ignore it); the 4-term form names the context explicitly,
which is how rules read inboxes and conclude into per-peer outboxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from .errors import ParseError, TermError
from .ns import RESERVED_PREFIXES, TAU_DEFAULT, TAU_TYPE
from .reasoner import Rule
from .terms import (
    BOOLEAN,
    HEX,
    INTEGER,
    STRING,
    Blank,
    GraphTerm,
    Iri,
    ListTerm,
    Literal,
    NotExists,
    Quad,
    Term,
    Var,
    quad_is_ground,
    quad_text,
    term_text,
)

_MAX_NESTING = 100
_HEXDIGITS = set("0123456789abcdef")
_WORD_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_WORD_CHARS = _WORD_START | set("0123456789")


@dataclass
class Token:
    kind: str
    value: object
    line: int
    col: int


def _lex(text: str) -> List[Token]:
    tokens: List[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def err(msg: str, l=None, c=None):
        raise ParseError(l if l is not None else line, c if c is not None else col, msg)

    def advance(k: int = 1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance()
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                advance()
            continue
        tl, tc = line, col
        if c == "<":
            advance()
            start = i
            while i < n and text[i] not in ">":
                if text[i].isspace():
                    err("whitespace inside IRI", tl, tc)
                if text[i] == "<":
                    err("'<' inside IRI", tl, tc)
                advance()
            if i >= n:
                err("unterminated IRI", tl, tc)
            value = text[start:i]
            advance()
            if not value:
                err("empty IRI", tl, tc)
            tokens.append(Token("iriref", value, tl, tc))
            continue
        if c == '"':
            advance()
            buf = []
            while True:
                if i >= n:
                    err("unterminated string", tl, tc)
                ch = text[i]
                if ch == "\n":
                    err("unterminated string", tl, tc)
                if ch == "\\":
                    if i + 1 >= n or text[i + 1] not in '"\\':
                        err("bad escape in string", tl, tc)
                    buf.append(text[i + 1])
                    advance(2)
                    continue
                if ch == '"':
                    advance()
                    break
                buf.append(ch)
                advance()
            tokens.append(Token("string", "".join(buf), tl, tc))
            continue
        if c == "@":
            advance()
            start = i
            while i < n and text[i] in _WORD_CHARS:
                advance()
            word = text[start:i]
            if word not in ("prefix", "context", "not"):
                err(f"unknown directive @{word}", tl, tc)
            tokens.append(Token("@" + word, None, tl, tc))
            continue
        if c == "=":
            if i + 1 < n and text[i + 1] == ">":
                advance(2)
                tokens.append(Token("=>", None, tl, tc))
                continue
            err("expected '=>'", tl, tc)
        if c in "{}().":
            advance()
            tokens.append(Token(c, None, tl, tc))
            continue
        if c == "?":
            advance()
            start = i
            while i < n and text[i] in _WORD_CHARS:
                advance()
            name = text[start:i]
            if not name:
                err("expected variable name after '?'", tl, tc)
            tokens.append(Token("var", name, tl, tc))
            continue
        if c == "-" or c.isdigit():
            if c == "0" and i + 1 < n and text[i + 1] == "x":
                advance(2)
                start = i
                while i < n and text[i] in _HEXDIGITS:
                    advance()
                digits = text[start:i]
                if i < n and text[i] in _WORD_CHARS:
                    err("bad hex literal", tl, tc)
                if not digits or len(digits) % 2 != 0:
                    err("hex literal needs an even count of lowercase hex digits", tl, tc)
                tokens.append(Token("hex", digits, tl, tc))
                continue
            if c == "-":
                advance()
                if i >= n or not text[i].isdigit():
                    err("expected digits after '-'", tl, tc)
                neg = True
            else:
                neg = False
            start = i
            while i < n and text[i].isdigit():
                advance()
            if i < n and text[i] in _WORD_START:
                err("bad number", tl, tc)
            value = int(text[start:i])
            tokens.append(Token("integer", -value if neg else value, tl, tc))
            continue
        if c == ":" or c in _WORD_START:
            prefix = ""
            if c in _WORD_START:
                start = i
                while i < n and text[i] in _WORD_CHARS:
                    advance()
                prefix = text[start:i]
            if i < n and text[i] == ":":
                advance()
                start = i
                while i < n and text[i] in _WORD_CHARS:
                    advance()
                local = text[start:i]
                if prefix == "_":
                    if not local:
                        err("expected blank node label", tl, tc)
                    tokens.append(Token("blank", local, tl, tc))
                else:
                    tokens.append(Token("pname", (prefix, local), tl, tc))
                continue
            if prefix == "a":
                tokens.append(Token("a", None, tl, tc))
                continue
            if prefix == "true":
                tokens.append(Token("bool", "true", tl, tc))
                continue
            if prefix == "false":
                tokens.append(Token("bool", "false", tl, tc))
                continue
            err(f"bare name {prefix!r} is not a term (missing ':'?)", tl, tc)
        err(f"unexpected character {c!r}", tl, tc)
    tokens.append(Token("eof", None, line, col))
    return tokens


@dataclass
class Document:
    prefixes: Dict[str, str] = field(default_factory=lambda: dict(RESERVED_PREFIXES))
    default_context: Term = TAU_DEFAULT
    facts: List[Quad] = field(default_factory=list)
    rules: List[Rule] = field(default_factory=list)


# Raw graph items carry an unresolved context slot (None means "fill in with
# the surrounding default") until we know whether the braces were a rule graph
# or a quoted graph term.
_RawQuad = Tuple[Optional[Term], Term, Term, Term, int, int]


class _Parser:
    def __init__(self, text: str):
        self.tokens = _lex(text)
        self.pos = 0
        self.prefixes: Dict[str, str] = dict(RESERVED_PREFIXES)
        self.doc = Document(prefixes=self.prefixes)

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.next()
        if tok.kind != kind:
            raise ParseError(tok.line, tok.col, f"expected {kind!r}, found {tok.kind!r}")
        return tok

    def err(self, tok: Token, msg: str):
        raise ParseError(tok.line, tok.col, msg)

    # -- documents ----------------------------------------------------------

    def parse_document(self) -> Document:
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                break
            if tok.kind == "@prefix":
                self.parse_directive()
            elif tok.kind == "@context":
                self.parse_block()
            else:
                self.parse_statement(TAU_DEFAULT)
        return self.doc

    def parse_directive(self):
        self.expect("@prefix")
        tok = self.next()
        if tok.kind != "pname" or tok.value[1] != "":
            self.err(tok, "expected a prefix name ending in ':'")
        prefix = tok.value[0]
        if prefix in RESERVED_PREFIXES:
            self.err(tok, f"prefix {prefix}: is reserved")
        iritok = self.expect("iriref")
        self.expect(".")
        self.prefixes[prefix] = iritok.value

    def parse_block(self):
        self.expect("@context")
        tok = self.peek()
        ctx = self.parse_term(0)
        if not isinstance(ctx, Iri):
            self.err(tok, "block context must be an IRI")
        self.expect("{")
        while self.peek().kind != "}":
            if self.peek().kind == "eof":
                self.err(self.peek(), "unterminated @context block")
            self.parse_statement(ctx)
        self.expect("}")

    def parse_statement(self, ctx: Term):
        tok = self.peek()
        if tok.kind == "{":
            items = self.parse_graph_items(allow_not=True, depth=0)
            if self.peek().kind == "=>":
                self.next()
                concl_tok = self.peek()
                if concl_tok.kind != "{":
                    self.err(concl_tok, "expected conclusion graph after '=>'")
                conclusions = self.parse_graph_items(allow_not=False, depth=0)
                self.expect(".")
                self.doc.rules.append(
                    Rule(
                        premises=tuple(_fill(i, ctx) for i in items),
                        conclusions=tuple(_fill(i, ctx) for i in conclusions),
                        origin=ctx,
                        line=tok.line,
                    )
                )
                return
            # Not a rule after all: the braces were a quoted graph term used
            # as the subject of an ordinary statement.
            first = _graph_term(items, tok, self)
            self.finish_triple(ctx, tok, [first])
            return
        first = self.parse_term(0)
        self.finish_triple(ctx, tok, [first])

    def finish_triple(self, ctx: Term, start: Token, terms: List[Term]):
        while self.peek().kind != ".":
            if self.peek().kind == "eof":
                self.err(self.peek(), "unterminated statement")
            terms.append(self.parse_term(0))
            if len(terms) > 4:
                self.err(start, "statement has more than 4 terms")
        self.next()
        if len(terms) == 3:
            quad = Quad(ctx, terms[0], terms[1], terms[2])
        elif len(terms) == 4:
            quad = Quad(terms[0], terms[1], terms[2], terms[3])
        else:
            self.err(start, f"statement has {len(terms)} terms, expected 3 or 4")
        if not quad_is_ground(quad):
            self.err(start, "non-ground fact (variables are only allowed in rules)")
        if not isinstance(quad.ctx, Iri):
            self.err(start, "fact context must be an IRI")
        self.doc.facts.append(quad)

    # -- rule graphs and graph terms ----------------------------------------

    def parse_graph_items(self, allow_not: bool, depth: int):
        if depth > _MAX_NESTING:
            self.err(self.peek(), "nesting too deep")
        self.expect("{")
        items: list = []
        while True:
            tok = self.peek()
            if tok.kind == "}":
                self.next()
                return items
            if tok.kind == "eof":
                self.err(tok, "unterminated graph")
            if tok.kind == "@not":
                if not allow_not:
                    self.err(tok, "@not is only allowed inside a rule premise graph")
                self.next()
                inner_tok = self.peek()
                if inner_tok.kind != "{":
                    self.err(inner_tok, "expected graph after @not")
                inner = self.parse_graph_items(allow_not=False, depth=depth + 1)
                for item in inner:
                    if isinstance(item, tuple) and item[0] == "not":
                        self.err(tok, "@not graphs cannot nest")
                items.append(("not", inner, tok.line, tok.col))
                continue
            # The final '.' before '}' may be omitted, matching common N3 style.
            terms = [self.parse_term(depth + 1)]
            while self.peek().kind not in (".", "}"):
                if self.peek().kind == "eof":
                    self.err(self.peek(), "unterminated graph")
                terms.append(self.parse_term(depth + 1))
                if len(terms) > 4:
                    self.err(tok, "pattern has more than 4 terms")
            if self.peek().kind == ".":
                self.next()
            if len(terms) == 3:
                items.append((None, terms[0], terms[1], terms[2], tok.line, tok.col))
            elif len(terms) == 4:
                items.append((terms[0], terms[1], terms[2], terms[3], tok.line, tok.col))
            else:
                self.err(tok, f"pattern has {len(terms)} terms, expected 3 or 4")

    # -- terms ---------------------------------------------------------------

    def parse_term(self, depth: int) -> Term:
        if depth > _MAX_NESTING:
            self.err(self.peek(), "nesting too deep")
        tok = self.next()
        try:
            if tok.kind == "iriref":
                return Iri(tok.value)
            if tok.kind == "pname":
                prefix, local = tok.value
                if not local:
                    self.err(tok, "expected a name after the prefix")
                if prefix not in self.prefixes:
                    self.err(tok, f"undeclared prefix {prefix}:")
                return Iri(self.prefixes[prefix] + local)
            if tok.kind == "blank":
                return Blank(tok.value)
            if tok.kind == "var":
                return Var(tok.value)
            if tok.kind == "string":
                return Literal(tok.value, STRING)
            if tok.kind == "integer":
                return Literal(str(tok.value), INTEGER)
            if tok.kind == "hex":
                return Literal(tok.value, HEX)
            if tok.kind == "bool":
                return Literal(tok.value, BOOLEAN)
            if tok.kind == "a":
                return TAU_TYPE
            if tok.kind == "(":
                items = []
                while self.peek().kind != ")":
                    if self.peek().kind == "eof":
                        self.err(self.peek(), "unterminated list")
                    items.append(self.parse_term(depth + 1))
                self.next()
                return ListTerm(tuple(items))
            if tok.kind == "{":
                self.pos -= 1
                items = self.parse_graph_items(allow_not=False, depth=depth + 1)
                return _graph_term(items, tok, self)
        except TermError as exc:
            raise ParseError(tok.line, tok.col, str(exc)) from exc
        self.err(tok, f"expected a term, found {tok.kind!r}")


def _fill(item, ctx: Term):
    """Resolve a raw graph item against the rule's declaration context."""
    if item[0] == "not":
        _, inner, _, _ = item
        return NotExists(tuple(_fill(i, ctx) for i in inner))
    c, s, p, o, _, _ = item
    return Quad(c if c is not None else ctx, s, p, o)


def _graph_term(items, tok: Token, parser: _Parser) -> GraphTerm:
    quads = []
    for item in items:
        if item[0] == "not":
            parser.err(tok, "@not is only allowed inside a rule premise graph")
        c, s, p, o, _, _ = item
        quads.append(Quad(c if c is not None else TAU_DEFAULT, s, p, o))
    return GraphTerm(tuple(quads))


def parse(data) -> Document:
    """Parse a document from bytes or text."""
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(1, 1, f"invalid UTF-8: {exc}") from exc
    else:
        text = data
    return _Parser(text).parse_document()


def parse_premises(data) -> List[Union[Quad, NotExists]]:
    """Parse optional @prefix directives followed by one premise graph."""
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(1, 1, f"invalid UTF-8: {exc}") from exc
    else:
        text = data
    p = _Parser(text)
    while p.peek().kind == "@prefix":
        p.parse_directive()
    tok = p.peek()
    if tok.kind != "{":
        p.err(tok, "expected a pattern graph")
    items = p.parse_graph_items(allow_not=True, depth=0)
    p.expect("eof")
    return [_fill(i, TAU_DEFAULT) for i in items]


# ---------------------------------------------------------------------------
# Serializer
# ---------------------------------------------------------------------------

def _premise_text(item: Union[Quad, NotExists]) -> str:
    if isinstance(item, NotExists):
        return "@not { " + " ".join(quad_text(q) + " ." for q in item.patterns) + " }"
    return quad_text(item) + " ."


def rule_text(rule: Rule) -> str:
    prem = " ".join(_premise_text(p) for p in rule.premises)
    concl = " ".join(quad_text(q) + " ." for q in rule.conclusions)
    return "{ " + prem + " } => { " + concl + " } ."


def serialize(doc: Document) -> bytes:
    """Emit a document that reparses equal: full IRIs, one statement per line.

    Facts use the 4-term line format; rules declared outside tau:default are
    wrapped in a one-line @context block to preserve their origin.
    """
    lines: List[str] = []
    for q in doc.facts:
        lines.append(quad_text(q) + " .")
    for r in doc.rules:
        text = rule_text(r)
        if r.origin != TAU_DEFAULT:
            text = f"@context {term_text(r.origin)} {{ {text} }}"
        lines.append(text)
    return ("\n".join(lines) + "\n").encode() if lines else b""
