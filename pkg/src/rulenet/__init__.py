"""Rule-driven peer-to-peer node engine over a quad store.

Protocol behaviour is written as declarative rules: the engine parses a small
N3-style language, saturates facts under the rules, and turns derived quads
into outbound messages and storage effects. A Kademlia-flavoured DHT ruleset
and a deterministic network simulator are shipped with the package.
"""

from .errors import (
    BuiltinError,
    EngineError,
    LimitError,
    NodeError,
    ParseError,
    StoreError,
    TermError,
    ValidationError,
)
from .node import Action, NodeState, Send, StoreLocal
from .parser import Document, parse, parse_premises, serialize
from .reasoner import (
    Rule,
    Ruleset,
    SaturationReport,
    check_stratified,
    make_ruleset,
    query,
    saturate,
)
from .store import QuadStore
from .terms import (
    Binding,
    Blank,
    GraphTerm,
    Iri,
    ListTerm,
    Literal,
    NotExists,
    Quad,
    Term,
    Var,
    canonical_quads,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Binding",
    "Blank",
    "BuiltinError",
    "Document",
    "EngineError",
    "GraphTerm",
    "Iri",
    "LimitError",
    "ListTerm",
    "Literal",
    "NodeError",
    "NodeState",
    "NotExists",
    "ParseError",
    "Quad",
    "QuadStore",
    "Rule",
    "Ruleset",
    "SaturationReport",
    "Send",
    "StoreError",
    "StoreLocal",
    "Term",
    "TermError",
    "ValidationError",
    "Var",
    "canonical_quads",
    "check_stratified",
    "make_ruleset",
    "parse",
    "parse_premises",
    "query",
    "saturate",
    "serialize",
]
