"""Shipped DHT ruleset plus a rule-free reference implementation.

The reference implements the same inbound-message handlers as the ruleset
(ping, store, find-node, find-value, routing update) with identical
parameters and policies, directly in Python. Given the same inbound
payloads it produces, per tick, the same outbound quad sets as a rule-driven
node; the equivalence tests lean on that. Lookup and bootstrap behaviour is
user-seeded rather than inbound-triggered, so it is exercised through the
simulator instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .errors import BuiltinError, ParseError
from .ns import TAU_DEFAULT, TAU_TYPE, node_iri, tau
from .parser import Document, parse
from .reasoner import Ruleset, make_ruleset
from .terms import HEX, Iri, Literal, ListTerm, Quad, Term, rename_blanks_quad

TAU_ID = tau("id")
TAU_KEY = tau("key")
TAU_VALUE = tau("value")
TAU_TARGET = tau("target")
TAU_RPC = tau("rpc")
TAU_FOUND = tau("found")
TAU_PING = tau("Ping")
TAU_PONG = tau("Pong")
TAU_STORE = tau("Store")
TAU_FIND_NODE = tau("FindNode")
TAU_FIND_VALUE = tau("FindValue")
TAU_NODES = tau("Nodes")
TAU_VALUE_MSG = tau("Value")


@dataclass(frozen=True)
class DhtParams:
    """Desk-scale defaults; the shipped ruleset is written for k = 4."""

    k: int = 4
    id_bits: int = 16
    alpha: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.id_bits not in (8, 16, 32, 64):
            raise ValueError("id width must be 8, 16, 32 or 64 bits")


def dht_ruleset_text() -> str:
    return resources.files("rulenet").joinpath("rulesets/dht.tau").read_text()


def load_dht_ruleset() -> Ruleset:
    doc: Document = parse(dht_ruleset_text())
    return make_ruleset(doc.rules)


# ---------------------------------------------------------------------------
# Reference oracle
# ---------------------------------------------------------------------------

def _xor_hex(a: str, b: str) -> int:
    return int(a, 16) ^ int(b, 16)


def _bucket_of(a: str, b: str) -> int:
    x = _xor_hex(a, b)
    if x == 0:
        raise BuiltinError("bucket index undefined for equal ids")
    return x.bit_length() - 1


def _hex_literal(t: Term, width: int) -> Optional[str]:
    if isinstance(t, Literal) and t.tag == HEX and len(t.lexical) * 4 == width:
        return t.lexical
    return None


class ReferenceDht:
    """Native handler state: routing pairs, bucket membership, stored values."""

    def __init__(self, id_hex: str, bits: int = 16, k: int = 4):
        self.self_iri = node_iri(id_hex)
        self.self_id = Literal(id_hex, HEX)
        self.bits = bits
        self.k = k
        self.ids: Set[Tuple[str, str]] = set()  # (peer iri text, id digits)
        self.buckets: Set[Tuple[str, int]] = set()
        self.kv: Set[Tuple[Term, Term]] = set()
        self.drops = 0
        self._seq = 0

    # -- message plumbing -----------------------------------------------------

    def _parse_payload(self, payload: bytes) -> Optional[List[Quad]]:
        try:
            doc = parse(payload)
        except ParseError:
            return None
        if doc.rules:
            return None
        labels = sorted({lbl for q in doc.facts for lbl in _labels(q)})
        mapping = {lbl: f"o{self._seq}_{lbl}" for lbl in labels}
        self._seq += 1
        return [rename_blanks_quad(q, mapping) for q in doc.facts]

    def _k_closest(self, target: str) -> List[Tuple[str, str]]:
        """Pairs not strictly beaten by k distinct closer ids (ties included)."""
        out = []
        for peer, pid in self.ids:
            d = _xor_hex(pid, target)
            closer = {qid for _, qid in self.ids if _xor_hex(qid, target) < d}
            if len(closer) < self.k:
                out.append((peer, pid))
        return out

    # -- one synchronous tick --------------------------------------------------

    def handle_tick(self, batch: Iterable[Tuple[Iri, bytes]]) -> Dict[str, Set[Quad]]:
        """Process one tick's inbound payloads; returns outbound quad sets.

        Mirrors the ruleset's stratum order: stores first, then routing
        admission against start-of-tick occupancy, then replies computed over
        the updated routing table.
        """
        inbox: Dict[str, Set[Tuple[Term, Term, Term]]] = {}
        for from_iri, payload in batch:
            quads = self._parse_payload(payload)
            if quads is None:
                self.drops += 1
                continue
            triples = {(q.sub, q.pred, q.obj) for q in quads}
            inbox.setdefault(from_iri.text, set()).update(triples)

        # Stores.
        for sender, triples in inbox.items():
            props = _group(triples)
            for m, pmap in props.items():
                if TAU_STORE in pmap.get(TAU_TYPE, ()):
                    for key in pmap.get(TAU_KEY, ()):
                        for value in pmap.get(TAU_VALUE, ()):
                            self.kv.add((key, value))

        # Routing admission: lowest announced id per non-full bucket, judged
        # against the occupancy at the start of the tick.
        occupancy: Dict[int, Set[str]] = {}
        for peer, bucket in self.buckets:
            for p2, pid in self.ids:
                if p2 == peer:
                    occupancy.setdefault(bucket, set()).add(pid)
        cands: Dict[int, List[Tuple[str, str]]] = {}
        for sender, triples in inbox.items():
            if sender == self.self_iri.text:
                continue
            sender_term = Iri(sender)
            for sub, pred, obj in triples:
                if sub != sender_term or pred != TAU_ID:
                    continue
                pid = _hex_literal(obj, self.bits)
                if pid is None:
                    raise BuiltinError(f"sender {sender} announced a malformed id")
                if pid == self.self_id.lexical:
                    continue
                cands.setdefault(_bucket_of(self.self_id.lexical, pid), []).append((sender, pid))
        for bucket, pairs in cands.items():
            if len(occupancy.get(bucket, ())) >= self.k:
                continue
            low = min(int(pid, 16) for _, pid in pairs)
            for peer, pid in pairs:
                if int(pid, 16) == low:
                    self.ids.add((peer, pid))
                    self.buckets.add((peer, bucket))

        # Replies, over the post-admission table.
        out: Dict[str, Set[Quad]] = {}
        for sender, triples in inbox.items():
            reply: Set[Tuple[Term, Term, Term]] = set()
            props = _group(triples)
            for m, pmap in props.items():
                types = pmap.get(TAU_TYPE, set())
                if TAU_PING in types:
                    reply.add((m, TAU_TYPE, TAU_PONG))
                if TAU_FIND_NODE in types:
                    toks = pmap.get(TAU_RPC, set())
                    targets = pmap.get(TAU_TARGET, set())
                    if toks and targets:
                        reply.add((m, TAU_TYPE, TAU_NODES))
                        for tok in toks:
                            reply.add((m, TAU_RPC, tok))
                        for t in targets:
                            for peer, pid in self._k_closest(self._target(t)):
                                reply.add((m, TAU_FOUND, ListTerm((Iri(peer), Literal(pid, HEX)))))
                if TAU_FIND_VALUE in types:
                    keys = pmap.get(TAU_KEY, set())
                    known = {k for k, _ in self.kv}
                    for key in keys:
                        if key in known:
                            reply.add((m, TAU_TYPE, TAU_VALUE_MSG))
                            reply.add((m, TAU_KEY, key))
                            for k2, v in self.kv:
                                if k2 == key:
                                    reply.add((m, TAU_VALUE, v))
                    missing = [k for k in keys if k not in known]
                    toks = pmap.get(TAU_RPC, set())
                    if missing and toks:
                        reply.add((m, TAU_TYPE, TAU_NODES))
                        for tok in toks:
                            reply.add((m, TAU_RPC, tok))
                        for key in missing:
                            for peer, pid in self._k_closest(self._target(key)):
                                reply.add((m, TAU_FOUND, ListTerm((Iri(peer), Literal(pid, HEX)))))
            if reply:
                reply.add((self.self_iri, TAU_ID, self.self_id))
                out[sender] = {Quad(TAU_DEFAULT, s, p, o) for s, p, o in reply}
        return out

    def _target(self, t: Term) -> str:
        # The rules only evaluate xor when the routing table is non-empty; a
        # malformed target would abort the tick there, and the generator-side
        # contract is that targets are well-formed hex of the id width.
        digits = _hex_literal(t, self.bits)
        if digits is None:
            raise BuiltinError(f"malformed lookup target {t}")
        return digits


def _labels(q: Quad) -> List[str]:
    from .terms import _collect_blanks

    out: List[str] = []
    for s in q.slots():
        _collect_blanks(s, out)
    return out


def _group(triples: Set[Tuple[Term, Term, Term]]) -> Dict[Term, Dict[Term, Set[Term]]]:
    """Group a sender's inbox triples by message node, then by predicate."""
    out: Dict[Term, Dict[Term, Set[Term]]] = {}
    for s, p, o in triples:
        out.setdefault(s, {}).setdefault(p, set()).add(o)
    return out
