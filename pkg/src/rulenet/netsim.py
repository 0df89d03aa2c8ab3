"""Deterministic discrete-event network simulator.

Synchronous tick model: at each tick, due messages are delivered (or
dropped), scripted injects land in user contexts, every node ticks once in
ascending IRI order, and each Send becomes a queued event with a drawn
latency. All randomness comes from one splitmix-style generator seeded by
the scenario, with draws consumed in a fixed order (drop draw then latency
draw, at enqueue time, per event), so a trace is a pure function of the
scenario bytes and the seed.
"""

from __future__ import annotations

import hashlib
import heapq
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Set, Tuple

from .errors import NodeError, ValidationError
from .node import Action, NodeState, Send
from .ns import STATE_RT, TAU_DEFAULT, TAU_TYPE, sim, tau, trace
from .reasoner import Ruleset
from .store import QuadStore
from .terms import (
    GraphTerm,
    HEX,
    INTEGER,
    STRING,
    Iri,
    Literal,
    Quad,
    Term,
    canonical_quads,
    integer,
    quad_is_ground,
    sort_key,
    string,
    term_text,
)

SIM_CONFIG = sim("config")
SIM_CFG = sim("cfg")
SIM_NODE = sim("Node")
SIM_ID = sim("id")
SIM_SEED = sim("seed")
SIM_LATENCY_LO = sim("latencyLo")
SIM_LATENCY_HI = sim("latencyHi")
SIM_DROP = sim("drop")
SIM_MAX_TICKS = sim("maxTicks")
SIM_K = sim("k")
SIM_ID_BITS = sim("idBits")
SIM_INJECT = sim("Inject")
SIM_AT = sim("at")
SIM_NODE_REF = sim("node")
SIM_PAYLOAD = sim("payload")

TRACE_EVENTS = trace("events")
TRACE_PAYLOADS = trace("payloads")
TRACE_TICK = trace("tick")
TRACE_SENT_AT = trace("sentAt")
TRACE_SEQ = trace("seq")
TRACE_FROM = trace("from")
TRACE_TO = trace("to")
TRACE_PAYLOAD = trace("payload")
TRACE_CONTENT = trace("content")
TRACE_INFO = trace("info")
TRACE_DELIVERY = trace("Delivery")
TRACE_DROP = trace("Drop")
TRACE_INJECT = trace("Inject")
TRACE_ERROR = trace("Error")

_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


class SplitMix64:
    """The pinned trace generator: one additive step, two xor-shift-multiply mixes."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (self.state + _GOLDEN_GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX_1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX_2) & _MASK
        return z ^ (z >> 31)


@dataclass(frozen=True)
class Inject:
    at: int
    node: Iri
    payload: GraphTerm


@dataclass
class Scenario:
    nodes: List[Tuple[Iri, str]]  # (iri, id digits), ascending iri order
    k: int
    id_bits: int
    latency_lo: int
    latency_hi: int
    drop: Fraction
    seed: int
    max_ticks: int
    injects: List[Inject]


@dataclass(order=True)
class SimEvent:
    deliver_at: int
    seq: int
    frm: str = field(compare=False)
    to: str = field(compare=False)
    payload: bytes = field(compare=False)
    dropped: bool = field(compare=False)
    sent_at: int = field(compare=False, default=0)


def _int_value(t: Term, pred: Iri) -> int:
    if not (isinstance(t, Literal) and t.tag == INTEGER):
        raise ValidationError(f"scenario value for {pred.text} must be an integer")
    return int(t.lexical)


def load_scenario(doc) -> Scenario:
    """Validate a parsed scenario document (sim:config context)."""
    cfg: Dict[Iri, List[Term]] = {}
    nodes: Dict[str, List[Term]] = {}
    node_order: List[Iri] = []
    injects: Dict[str, Dict[Iri, List[Term]]] = {}
    inject_order: List[Term] = []
    for q in doc.facts:
        if q.ctx != SIM_CONFIG:
            continue
        if q.sub == SIM_CFG:
            cfg.setdefault(q.pred, []).append(q.obj)
        if q.pred == TAU_TYPE and q.obj == SIM_NODE:
            if isinstance(q.sub, Iri) and q.sub.text not in nodes:
                nodes[q.sub.text] = []
                node_order.append(q.sub)
        if q.pred == TAU_TYPE and q.obj == SIM_INJECT:
            key = _subject_key(q.sub)
            if key not in injects:
                injects[key] = {}
                inject_order.append(q.sub)

    def required(pred: Iri) -> Term:
        values = cfg.get(pred)
        if not values:
            raise ValidationError(f"scenario is missing required quad {pred.text}")
        return values[0]

    seed = _int_value(required(SIM_SEED), SIM_SEED)
    lo = _int_value(required(SIM_LATENCY_LO), SIM_LATENCY_LO)
    hi = _int_value(required(SIM_LATENCY_HI), SIM_LATENCY_HI)
    max_ticks = _int_value(required(SIM_MAX_TICKS), SIM_MAX_TICKS)
    k = _int_value(required(SIM_K), SIM_K)
    id_bits = _int_value(required(SIM_ID_BITS), SIM_ID_BITS)
    drop_term = required(SIM_DROP)
    if not (isinstance(drop_term, Literal) and drop_term.tag == STRING):
        raise ValidationError("scenario sim:drop must be a \"p/q\" string")
    try:
        p_str, q_str = drop_term.lexical.split("/")
        drop = Fraction(int(p_str), int(q_str))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"malformed drop fraction {drop_term.lexical!r}") from exc
    if not 0 <= drop <= 1:
        raise ValidationError("drop probability must lie in [0, 1]")
    if id_bits not in (8, 16, 32, 64):
        raise ValidationError("sim:idBits must be 8, 16, 32 or 64")
    if k < 1:
        raise ValidationError("sim:k must be at least 1")
    if lo < 1 or hi < lo:
        raise ValidationError("latency range must satisfy 1 <= lo <= hi")
    if max_ticks < 1:
        raise ValidationError("sim:maxTicks must be at least 1")
    if not node_order:
        raise ValidationError("scenario declares no sim:Node")

    # Collect per-node ids, checking width and uniqueness.
    for q in doc.facts:
        if q.ctx == SIM_CONFIG and q.pred == SIM_ID and isinstance(q.sub, Iri) and q.sub.text in nodes:
            nodes[q.sub.text].append(q.obj)
    seen_ids: Set[str] = set()
    node_list: List[Tuple[Iri, str]] = []
    for n in node_order:
        ids = nodes[n.text]
        if len(ids) != 1:
            raise ValidationError(f"node {n.text} needs exactly one sim:id")
        ident = ids[0]
        if not (isinstance(ident, Literal) and ident.tag == HEX and len(ident.lexical) * 4 == id_bits):
            raise ValidationError(f"node {n.text} id must be hex of width {id_bits} bits")
        if ident.lexical in seen_ids:
            raise ValidationError(f"duplicate node id 0x{ident.lexical}")
        seen_ids.add(ident.lexical)
        node_list.append((n, ident.lexical))
    node_list.sort(key=lambda pair: pair[0].text)

    # Collect inject fields.
    for q in doc.facts:
        if q.ctx == SIM_CONFIG:
            key = _subject_key(q.sub)
            if key in injects:
                injects[key].setdefault(q.pred, []).append(q.obj)
    inject_list: List[Inject] = []
    node_iris = {n.text for n, _ in node_list}
    for subj in inject_order:
        props = injects[_subject_key(subj)]

        def prop(pred: Iri) -> Term:
            values = props.get(pred)
            if not values:
                raise ValidationError(f"inject {subj} is missing required quad {pred.text}")
            return values[0]

        at = _int_value(prop(SIM_AT), SIM_AT)
        if at < 1:
            raise ValidationError("inject sim:at must be at least 1")
        target = prop(SIM_NODE_REF)
        if not (isinstance(target, Iri) and target.text in node_iris):
            raise ValidationError(f"inject {subj} targets an undeclared node")
        payload = prop(SIM_PAYLOAD)
        if not isinstance(payload, GraphTerm):
            raise ValidationError(f"inject {subj} payload must be a quoted graph")
        if not all(quad_is_ground(item) for item in payload.items):
            raise ValidationError(f"inject {subj} payload must be ground")
        inject_list.append(Inject(at, target, payload))
    inject_list.sort(key=lambda i: i.at)

    return Scenario(node_list, k, id_bits, lo, hi, drop, seed, max_ticks, inject_list)


def _subject_key(t: Term) -> str:
    return term_text(t)


@dataclass
class SimResult:
    ticks: int
    delivered: int
    dropped: int
    sends: int
    trace: QuadStore
    payloads: Dict[str, Tuple[Quad, ...]]
    action_log: Dict[str, List[Tuple[int, Action]]]
    nodes: Dict[str, NodeState]
    errors: List[Tuple[int, str, str]]
    rt_snapshots: Dict[Tuple[str, int], frozenset]


def run(
    scenario: Scenario,
    ruleset: Ruleset,
    seed: Optional[int] = None,
    trace_path: Optional[str] = None,
    collect_rt: bool = False,
) -> SimResult:
    rng = SplitMix64(seed if seed is not None else scenario.seed)
    nodes: Dict[str, NodeState] = {}
    for iri, ident in scenario.nodes:
        nodes[iri.text] = NodeState(
            ident, ruleset, bits=scenario.id_bits, k=scenario.k, iri=iri
        )
    order = [iri.text for iri, _ in scenario.nodes]

    queue: List[SimEvent] = []
    seq = 0
    ev_no = 0
    trace_store = QuadStore()
    payload_map: Dict[str, Tuple[Quad, ...]] = {}
    action_log: Dict[str, List[Tuple[int, Action]]] = {text: [] for text in order}
    errors: List[Tuple[int, str, str]] = []
    rt_snapshots: Dict[Tuple[str, int], frozenset] = {}
    delivered = dropped = sends = 0

    pending_injects: Dict[int, List[Inject]] = {}
    for inj in scenario.injects:
        pending_injects.setdefault(inj.at, []).append(inj)

    def event_node() -> Iri:
        nonlocal ev_no
        node = trace(f"e{ev_no:08d}")
        ev_no += 1
        return node

    def record_payload(quads) -> Literal:
        body = canonical_quads(quads)
        digest = hashlib.sha256(body).hexdigest()
        lit = Literal(digest, HEX)
        if digest not in payload_map:
            payload_map[digest] = tuple(sorted(set(quads), key=sort_key))
            content = GraphTerm(tuple(payload_map[digest]))
            trace_store.insert(Quad(TRACE_PAYLOADS, lit, TRACE_CONTENT, content))
        return lit

    def record(kind: Iri, tick: int, **fields):
        e = event_node()
        trace_store.insert(Quad(TRACE_EVENTS, e, TAU_TYPE, kind))
        trace_store.insert(Quad(TRACE_EVENTS, e, TRACE_TICK, integer(tick)))
        for pred, value in fields.items():
            trace_store.insert(Quad(TRACE_EVENTS, e, _FIELD_PREDS[pred], value))

    tick = 0
    while True:
        tick += 1
        while queue and queue[0].deliver_at == tick:
            ev = heapq.heappop(queue)
            kind = TRACE_DROP if ev.dropped or ev.to not in nodes else TRACE_DELIVERY
            if kind == TRACE_DELIVERY:
                nodes[ev.to].ingest(Iri(ev.frm), ev.payload)
                delivered += 1
            else:
                dropped += 1
            record(
                kind,
                tick,
                seq=integer(ev.seq),
                frm=Iri(ev.frm),
                to=Iri(ev.to),
                payload=Literal(hashlib.sha256(ev.payload).hexdigest(), HEX),
                sent_at=integer(ev.sent_at),
            )
        for inj in pending_injects.pop(tick, ()):  # file order within a tick
            nodes[inj.node.text].inject_user(inj.payload.items)
            record(TRACE_INJECT, tick, to=inj.node, payload=record_payload(inj.payload.items))
        for text in order:
            node = nodes[text]
            try:
                actions = node.tick()
            except NodeError as exc:
                errors.append((tick, text, str(exc)))
                record(TRACE_ERROR, tick, to=Iri(text), info=string(str(exc)))
                continue
            action_log[text].extend((tick, a) for a in actions)
            for action in actions:
                if isinstance(action, Send):
                    drop_draw = rng.next()
                    is_dropped = drop_draw * scenario.drop.denominator < scenario.drop.numerator * (1 << 64)
                    span = scenario.latency_hi - scenario.latency_lo + 1
                    latency = scenario.latency_lo + rng.next() % span
                    record_payload(action.quads)
                    heapq.heappush(
                        queue,
                        SimEvent(tick + latency, seq, text, action.peer.text, action.payload, is_dropped, tick),
                    )
                    seq += 1
                    sends += 1
            if collect_rt:
                pairs = frozenset(
                    (q.sub, q.obj)
                    for q in node.store.quads_in_context(STATE_RT)
                    if q.pred == _TAU_PEER_ID
                )
                rt_snapshots[(text, tick)] = pairs
        if tick >= scenario.max_ticks:
            break
        if not queue and not pending_injects:
            break

    result = SimResult(
        tick, delivered, dropped, sends, trace_store, payload_map, action_log, nodes, errors, rt_snapshots
    )
    if trace_path is not None:
        write_trace(result, trace_path)
    return result


_TAU_PEER_ID = tau("peerId")

_FIELD_PREDS = {
    "seq": TRACE_SEQ,
    "frm": TRACE_FROM,
    "to": TRACE_TO,
    "payload": TRACE_PAYLOAD,
    "sent_at": TRACE_SENT_AT,
    "info": TRACE_INFO,
}


def write_trace(result: SimResult, path: str):
    """Write the trace document atomically."""
    data = result.trace.canonical_bytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
