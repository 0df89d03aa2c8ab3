"""Quad store with pattern matching.

Set semantics, two permutation indexes (context-first and predicate-first) so
patterns with a ground context or predicate never scan the whole store, and a
canonical byte serialization used for equality, hashing and wire payloads.
"""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Set

from .errors import StoreError
from .terms import (
    Binding,
    Blank,
    Iri,
    Literal,
    Quad,
    Term,
    Var,
    apply_binding_quad,
    canonical_quads,
    quad_is_ground,
    sort_key,
    unify_quad,
)


_EMPTY: Set[Quad] = frozenset()


class QuadStore:
    def __init__(self):
        self._quads: Set[Quad] = set()
        self._by_ctx: Dict[Term, Set[Quad]] = {}
        self._by_pred: Dict[Term, Set[Quad]] = {}
        # Composite permutation indexes: rule premises overwhelmingly fix the
        # (context, predicate) or (predicate, object) slots.
        self._by_cp: Dict[tuple, Set[Quad]] = {}
        self._by_po: Dict[tuple, Set[Quad]] = {}

    def __len__(self) -> int:
        return len(self._quads)

    def __iter__(self) -> Iterator[Quad]:
        return iter(self._quads)

    def __contains__(self, quad: Quad) -> bool:
        return quad in self._quads

    def copy(self) -> "QuadStore":
        out = QuadStore()
        for q in self._quads:
            out._add(q)
        return out

    def _add(self, quad: Quad):
        self._quads.add(quad)
        self._by_ctx.setdefault(quad.ctx, set()).add(quad)
        self._by_pred.setdefault(quad.pred, set()).add(quad)
        self._by_cp.setdefault((quad.ctx, quad.pred), set()).add(quad)
        self._by_po.setdefault((quad.pred, quad.obj), set()).add(quad)

    def insert(self, quad: Quad) -> bool:
        """Insert a ground quad; returns True iff it was not already present."""
        if not quad_is_ground(quad):
            raise StoreError(f"cannot insert non-ground quad: {quad}")
        if not isinstance(quad.ctx, Iri):
            raise StoreError(f"quad context must be an IRI: {quad}")
        if quad in self._quads:
            return False
        self._add(quad)
        return True

    def remove(self, quad: Quad) -> bool:
        if quad not in self._quads:
            return False
        self._quads.discard(quad)
        for index, key in (
            (self._by_ctx, quad.ctx),
            (self._by_pred, quad.pred),
            (self._by_cp, (quad.ctx, quad.pred)),
            (self._by_po, (quad.pred, quad.obj)),
        ):
            index[key].discard(quad)
            if not index[key]:
                del index[key]
        return True

    def contexts(self) -> List[Term]:
        return list(self._by_ctx.keys())

    def quads_in_context(self, ctx: Term) -> List[Quad]:
        return list(self._by_ctx.get(ctx, ()))

    def _candidates(self, pattern: Quad) -> Set[Quad]:
        # Narrowest applicable index first; full scan only when neither the
        # context nor the predicate is ground.
        ctx_ground = not isinstance(pattern.ctx, Var)
        pred_ground = not isinstance(pattern.pred, Var)
        if ctx_ground and pred_ground:
            return self._by_cp.get((pattern.ctx, pattern.pred), _EMPTY)
        if pred_ground and isinstance(pattern.obj, (Iri, Literal, Blank)):
            return self._by_po.get((pattern.pred, pattern.obj), _EMPTY)
        if ctx_ground:
            return self._by_ctx.get(pattern.ctx, _EMPTY)
        if pred_ground:
            return self._by_pred.get(pattern.pred, _EMPTY)
        return self._quads

    def match_iter(self, pattern: Quad, seed: Optional[Binding] = None) -> Iterator[Binding]:
        """Unordered matching for internal joins; same solutions as match."""
        base: Binding = seed if seed is not None else {}
        bound = apply_binding_quad(pattern, base) if base else pattern
        for quad in self._candidates(bound):
            b = unify_quad(bound, quad, base)
            if b is not None:
                yield b

    def could_match(self, pattern: Quad) -> bool:
        return bool(self._candidates(pattern))

    def match(self, pattern: Quad, seed: Optional[Binding] = None) -> List[Binding]:
        """All bindings extending seed that instantiate pattern to a stored quad.

        Results follow the store's canonical quad order, so matching is
        deterministic regardless of insertion order.
        """
        base: Binding = seed if seed is not None else {}
        bound = apply_binding_quad(pattern, base)
        hits = []
        for quad in self._candidates(bound):
            b = unify_quad(bound, quad, base)
            if b is not None:
                hits.append((quad, b))
        if len(hits) > 1:
            hits.sort(key=lambda item: sort_key(item[0]))
        return [b for _, b in hits]

    def erase_context(self, ctx: Term) -> int:
        """Remove every quad stored under ctx; returns the count removed."""
        victims = list(self._by_ctx.get(ctx, ()))
        for q in victims:
            self.remove(q)
        return len(victims)

    def erase_context_prefix(self, prefix: str) -> int:
        """Remove every quad whose context IRI starts with prefix."""
        count = 0
        for ctx in list(self._by_ctx.keys()):
            if isinstance(ctx, Iri) and ctx.text.startswith(prefix):
                count += self.erase_context(ctx)
        return count

    def canonical_bytes(self, context: Optional[Term] = None) -> bytes:
        quads = self._by_ctx.get(context, set()) if context is not None else self._quads
        return canonical_quads(quads)
