"""Node state machine.

A node keeps one quad store partitioned by context convention:

    tau://state#...   persistent: self facts, routing table, key-value store,
                      lookup bookkeeping, injected parameters
    tau://user#in     the user's input
    tau://in#<peer>   transient per-peer inboxes (written by ingest)
    tau://out#<peer>  transient per-peer outboxes (written by rules)
    tau://tmp#...     transient per-tick scratch

Each tick: assert the clock fact, saturate the whole store under the node's
ruleset, turn outbox contexts into Send actions and fresh key-value quads
into a StoreLocal action, then erase every transient context. What a node
sends is therefore a pure function of its persistent state, its user input
and the payloads ingested since the previous tick.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .errors import EngineError, NodeError, ParseError
from .ns import (
    IN_PREFIX,
    OUT_PREFIX,
    STATE_CFG,
    STATE_KV,
    STATE_SELF,
    TAU_DEFAULT,
    TMP_PREFIX,
    USER_IN,
    inbox_iri,
    node_iri,
    tau,
)
from .parser import parse
from .reasoner import Ruleset, saturate
from .store import QuadStore
from .terms import (
    HEX,
    Iri,
    Literal,
    Quad,
    Var,
    _collect_blanks,
    canonical_quads,
    integer,
    rename_blanks_quad,
    sort_key,
)

TAU_ID = tau("id")
TAU_NOW = tau("now")
TAU_FROM = tau("from")
TAU_CFG = tau("cfg")
TAU_K = tau("k")
TAU_ID_BITS = tau("idBits")

ID_WIDTHS = (8, 16, 32, 64)

_ANY = Var("t")


@dataclass(frozen=True)
class Send:
    peer: Iri
    payload: bytes
    quads: Tuple[Quad, ...]


@dataclass(frozen=True)
class StoreLocal:
    quads: Tuple[Quad, ...]


Action = Union[Send, StoreLocal]


class NodeState:
    def __init__(
        self,
        id_hex: str,
        ruleset: Ruleset,
        bits: int = 64,
        k: Optional[int] = None,
        iri: Optional[Iri] = None,
        max_rounds: int = 64,
        max_derived: int = 200_000,
    ):
        if bits not in ID_WIDTHS:
            raise ValueError(f"id width must be one of {ID_WIDTHS}")
        if len(id_hex) * 4 != bits:
            raise ValueError(f"id {id_hex!r} does not have width {bits}")
        self.self_id = Literal(id_hex, HEX)
        self.self_iri = iri if iri is not None else node_iri(id_hex)
        self.bits = bits
        self.ruleset = ruleset
        self.max_rounds = max_rounds
        self.max_derived = max_derived
        self.clock = 0
        self.drops = 0
        self._msg_counter = 0
        self.store = QuadStore()
        self.store.insert(Quad(STATE_SELF, self.self_iri, TAU_ID, self.self_id))
        self.store.insert(Quad(STATE_CFG, TAU_CFG, TAU_ID_BITS, integer(bits)))
        if k is not None:
            self.store.insert(Quad(STATE_CFG, TAU_CFG, TAU_K, integer(k)))

    # -- input ---------------------------------------------------------------

    def _freshen(self, quads: Iterable[Quad]) -> List[Quad]:
        # Blank labels are scoped to one message; renaming them per ingest
        # keeps separate payloads from colliding inside a shared context.
        quads = list(quads)
        labels = sorted({label for q in quads for label in _blank_labels(q)})
        seq = self._msg_counter
        self._msg_counter += 1
        mapping = {label: f"m{seq}_{label}" for label in labels}
        return [rename_blanks_quad(q, mapping) for q in quads] if mapping else quads

    def ingest(self, from_iri: Iri, payload: bytes) -> int:
        """Insert a peer's payload into its inbox context.

        Payload contexts are discarded; a tau:from provenance quad records the
        transport-level sender. Malformed payloads are dropped whole and
        counted, leaving the store untouched.
        """
        try:
            doc = parse(payload)
        except ParseError:
            self.drops += 1
            return 0
        if doc.rules:
            self.drops += 1
            return 0
        ctx = inbox_iri(from_iri)
        count = 0
        for q in self._freshen(doc.facts):
            if self.store.insert(Quad(ctx, q.sub, q.pred, q.obj)):
                count += 1
        self.store.insert(Quad(ctx, from_iri, TAU_FROM, from_iri))
        return count

    def inject_user(self, quads: Iterable[Quad]) -> int:
        """Insert quads into the user input context (contexts rewritten)."""
        count = 0
        for q in self._freshen(quads):
            if self.store.insert(Quad(USER_IN, q.sub, q.pred, q.obj)):
                count += 1
        return count

    # -- tick ----------------------------------------------------------------

    def _replace_now(self):
        for b in self.store.match(Quad(STATE_SELF, self.self_iri, TAU_NOW, _ANY)):
            self.store.remove(Quad(STATE_SELF, self.self_iri, TAU_NOW, b["t"]))
        self.store.insert(Quad(STATE_SELF, self.self_iri, TAU_NOW, integer(self.clock)))

    def _clean(self):
        for prefix in (IN_PREFIX, OUT_PREFIX, TMP_PREFIX):
            self.store.erase_context_prefix(prefix)

    def tick(self) -> List[Action]:
        """Run one step: saturate, extract actions, erase transients.

        A saturation failure aborts the tick but still erases the transient
        contexts and advances the clock, so one bad message or rule cannot
        wedge the node permanently.
        """
        self._replace_now()
        kv_before = set(self.store.quads_in_context(STATE_KV))
        try:
            report = saturate(self.store, self.ruleset, self.max_rounds, self.max_derived)
        except EngineError as exc:
            self._clean()
            self.clock += 1
            raise NodeError(self.self_iri.text, str(exc)) from exc
        if report.hit_limit:
            self._clean()
            self.clock += 1
            raise NodeError(
                self.self_iri.text,
                f"saturation limit exceeded (rounds={report.rounds}, derived={report.derived})",
            )
        actions: List[Action] = []
        new_kv = sorted(set(self.store.quads_in_context(STATE_KV)) - kv_before, key=sort_key)
        if new_kv:
            actions.append(StoreLocal(tuple(new_kv)))
        sends = []
        for ctx in self.store.contexts():
            if isinstance(ctx, Iri) and ctx.text.startswith(OUT_PREFIX):
                peer = Iri(ctx.text[len(OUT_PREFIX):])
                quads = {Quad(TAU_DEFAULT, q.sub, q.pred, q.obj) for q in self.store.quads_in_context(ctx)}
                ordered = tuple(sorted(quads, key=sort_key))
                sends.append(Send(peer, canonical_quads(quads), ordered))
        sends.sort(key=lambda s: s.peer.text)
        actions.extend(sends)
        self._clean()
        self.clock += 1
        return actions


def _blank_labels(q: Quad) -> List[str]:
    out: List[str] = []
    for s in q.slots():
        _collect_blanks(s, out)
    return out
