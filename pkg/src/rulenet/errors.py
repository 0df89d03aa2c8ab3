"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class TermError(EngineError):
    """Malformed term construction (bad IRI text, bad literal form)."""


class StoreError(EngineError):
    """Rejected store mutation (non-ground quad, non-IRI context)."""


class ParseError(EngineError):
    """Syntax or document validation error, with a 1-based source position."""

    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message


class ValidationError(EngineError):
    """Semantic validation failure: range restriction, stratification, scenarios."""


class BuiltinError(EngineError):
    """A builtin predicate was invoked with unusable arguments."""


class LimitError(EngineError):
    """A configured resource limit (rounds, derived quads) was exceeded."""


class NodeError(EngineError):
    """A node tick failed; carries the node identity."""

    def __init__(self, node_iri: str, message: str):
        super().__init__(f"{node_iri}: {message}")
        self.node_iri = node_iri
