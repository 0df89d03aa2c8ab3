"""Command-line interface.

Exit codes are a stable scripting contract: 0 success, 1 parse error,
2 validation/stratification/scenario error, 3 resource limit exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import queue
import socket
import struct
import sys
import threading
import time
from typing import Dict, List, Optional, Tuple

from .dht import load_dht_ruleset
from .errors import NodeError, ParseError, ValidationError
from .netsim import load_scenario, run
from .node import NodeState, Send, StoreLocal
from .parser import parse, parse_premises, serialize
from .reasoner import (
    DEFAULT_MAX_DERIVED,
    DEFAULT_MAX_ROUNDS,
    make_ruleset,
    query,
    saturate,
)
from .store import QuadStore
from .terms import canonical_quads, term_text, Iri

MAX_FRAME = 16 * 1024 * 1024  # frames above 16 MiB close the connection

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_VALIDATION = 2
EXIT_LIMIT = 3


def _read_docs(paths: List[str]):
    docs = []
    for path in paths:
        with open(path, "rb") as fh:
            data = fh.read()
        try:
            docs.append(parse(data))
        except ParseError as exc:
            raise ParseError(exc.line, exc.col, f"{path}: {exc.message}") from exc
    return docs


def _facts_store(docs) -> QuadStore:
    store = QuadStore()
    for doc in docs:
        for q in doc.facts:
            store.insert(q)
    return store


def cmd_parse(args) -> int:
    try:
        docs = _read_docs([args.file])
    except ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    doc = docs[0]
    if args.canonical:
        sys.stdout.buffer.write(_facts_store(docs).canonical_bytes())
    else:
        sys.stdout.buffer.write(serialize(doc))
    return EXIT_OK


def cmd_infer(args) -> int:
    try:
        docs = _read_docs(args.facts + (args.rules or []))
    except ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    store = _facts_store(docs)
    rules = [r for doc in docs for r in doc.rules]
    try:
        ruleset = make_ruleset(rules)
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    report = saturate(store, ruleset, args.max_rounds, args.max_derived)
    if report.hit_limit:
        print(
            f"limit exceeded: rounds={report.rounds} derived={report.derived}",
            file=sys.stderr,
        )
        return EXIT_LIMIT
    sys.stdout.buffer.write(store.canonical_bytes())
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        docs = _read_docs(args.facts)
        premises = parse_premises(args.pattern)
    except ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    store = _facts_store(docs)
    for binding in query(store, premises):
        line = " ".join(f"?{v}={term_text(t)}" for v, t in sorted(binding.items()))
        print(line)
    return EXIT_OK


def _load_ruleset(paths: Optional[List[str]]):
    if not paths:
        return load_dht_ruleset()
    docs = _read_docs(paths)
    return make_ruleset([r for doc in docs for r in doc.rules])


def cmd_sim(args) -> int:
    try:
        docs = _read_docs([args.scenario])
        ruleset = _load_ruleset(args.ruleset)
    except ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    try:
        scenario = load_scenario(docs[0])
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    result = run(scenario, ruleset, seed=args.seed, trace_path=args.trace)
    print(f"ticks={result.ticks} delivered={result.delivered} dropped={result.dropped}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Live node mode
# ---------------------------------------------------------------------------


class _Connections:
    def __init__(self):
        self.lock = threading.Lock()
        self.by_peer: Dict[str, socket.socket] = {}

    def register(self, peer: str, conn: socket.socket):
        with self.lock:
            self.by_peer[peer] = conn

    def get(self, peer: str) -> Optional[socket.socket]:
        with self.lock:
            return self.by_peer.get(peer)

    def drop(self, conn: socket.socket):
        with self.lock:
            for peer, c in list(self.by_peer.items()):
                if c is conn:
                    del self.by_peer[peer]


def _send_frame(conn: socket.socket, body: bytes):
    conn.sendall(struct.pack(">I", len(body)) + body)


def _recv_exact(conn: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _recv_frame(conn: socket.socket) -> Optional[bytes]:
    header = _recv_exact(conn, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ValueError("oversize frame")
    return _recv_exact(conn, length)


def _hello_peer(payload: bytes) -> Optional[str]:
    """Extract the declared sender IRI from a hello frame."""
    from .node import TAU_ID

    try:
        doc = parse(payload)
    except ParseError:
        return None
    for q in doc.facts:
        if q.pred == TAU_ID and isinstance(q.sub, Iri):
            return q.sub.text
    return None


def _reader(conn, conns, inbox, stats):
    peer: Optional[str] = None
    try:
        while True:
            frame = _recv_frame(conn)
            if frame is None:
                break
            if peer is None:
                peer = _hello_peer(frame)
                if peer is None:
                    break
                conns.register(peer, conn)
            inbox.put((peer, frame))
    except (ValueError, OSError):
        pass
    finally:
        conns.drop(conn)
        try:
            conn.close()
        except OSError:
            pass


def _parse_addr(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_node(args) -> int:
    try:
        ruleset = _load_ruleset(args.ruleset)
    except ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    node = NodeState(args.id, ruleset, bits=args.bits, k=args.k)
    injects: Dict[int, List[str]] = {}
    for spec in args.inject or []:
        tick_str, _, path = spec.partition(":")
        injects.setdefault(int(tick_str), []).append(path)

    conns = _Connections()
    inbox: "queue.Queue[Tuple[str, bytes]]" = queue.Queue()
    hello = canonical_quads(
        [_self_quad(node)]
    )

    host, port = _parse_addr(args.listen)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen()
    print(f"listening on {server.getsockname()[0]}:{server.getsockname()[1]}", flush=True)

    def acceptor():
        while True:
            try:
                conn, _ = server.accept()
            except OSError:
                return
            try:
                _send_frame(conn, hello)
            except OSError:
                continue
            threading.Thread(target=_reader, args=(conn, conns, inbox, None), daemon=True).start()

    threading.Thread(target=acceptor, daemon=True).start()

    for addr in args.peer or []:
        peer_host, peer_port = _parse_addr(addr)
        conn = socket.create_connection((peer_host, peer_port))
        _send_frame(conn, hello)
        threading.Thread(target=_reader, args=(conn, conns, inbox, None), daemon=True).start()

    ticks_done = 0
    unknown_drops = 0
    try:
        while args.max_ticks == 0 or ticks_done < args.max_ticks:
            time.sleep(args.tick_ms / 1000.0)
            for path in injects.pop(node.clock + 1, ()):  # ticks are 1-based
                with open(path, "rb") as fh:
                    doc = parse(fh.read())
                node.inject_user(doc.facts)
            while True:
                try:
                    peer, payload = inbox.get_nowait()
                except queue.Empty:
                    break
                node.ingest(Iri(peer), payload)
            tick_no = node.clock + 1
            try:
                actions = node.tick()
            except NodeError as exc:
                print(f"tick={tick_no} error {exc}", flush=True)
                ticks_done += 1
                continue
            for action in actions:
                if isinstance(action, StoreLocal):
                    digest = hashlib.sha256(canonical_quads(action.quads)).hexdigest()
                    print(f"tick={tick_no} store sha256={digest}", flush=True)
                elif isinstance(action, Send):
                    digest = hashlib.sha256(action.payload).hexdigest()
                    conn = conns.get(action.peer.text)
                    if conn is None:
                        unknown_drops += 1
                        print(f"tick={tick_no} drop to={action.peer.text}", flush=True)
                        continue
                    try:
                        _send_frame(conn, action.payload)
                        print(f"tick={tick_no} send to={action.peer.text} sha256={digest}", flush=True)
                    except OSError:
                        conns.drop(conn)
                        print(f"tick={tick_no} drop to={action.peer.text}", flush=True)
            ticks_done += 1
    finally:
        server.close()
    return EXIT_OK


def _self_quad(node: NodeState):
    from .node import TAU_ID
    from .ns import TAU_DEFAULT
    from .terms import Quad

    return Quad(TAU_DEFAULT, node.self_iri, TAU_ID, node.self_id)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="rulenet", description="Rule-driven quad engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a document and reprint it")
    p.add_argument("file")
    p.add_argument("--canonical", action="store_true", help="print the canonical fact serialization")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("infer", help="saturate facts under rules")
    p.add_argument("facts", nargs="+")
    p.add_argument("--rules", action="append", default=[])
    p.add_argument("--max-rounds", type=int, default=DEFAULT_MAX_ROUNDS)
    p.add_argument("--max-derived", type=int, default=DEFAULT_MAX_DERIVED)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("query", help="match a pattern against facts")
    p.add_argument("facts", nargs="+")
    p.add_argument("--pattern", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("sim", help="run a scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--ruleset", action="append", default=[])
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("node", help="run a live node over TCP")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--peer", action="append", default=[])
    p.add_argument("--id", required=True, help="node id as lowercase hex digits")
    p.add_argument("--bits", type=int, default=64)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--ruleset", action="append", default=[])
    p.add_argument("--tick-ms", type=int, default=200)
    p.add_argument("--inject", action="append", default=[], help="TICK:FILE user input before that tick")
    p.add_argument("--max-ticks", type=int, default=0, help="stop after N ticks (0 = run forever)")
    p.set_defaults(func=cmd_node)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
