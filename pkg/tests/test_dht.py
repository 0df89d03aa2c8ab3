import random
from pathlib import Path

import pytest

from rulenet.dht import DhtParams, ReferenceDht, load_dht_ruleset
from rulenet.node import NodeState, Send
from rulenet.ns import STATE_KV, STATE_LK, STATE_RT, TAU_DEFAULT, USER_IN, node_iri, tau
from rulenet.terms import (
    Blank,
    Iri,
    ListTerm,
    Quad,
    Var,
    boolean,
    canonical_quads,
    hexlit,
    string,
)

DHT = load_dht_ruleset()
GOLDEN = Path(__file__).parent / "golden" / "dht_strata.txt"

SELF_ID = "00aa"
TAU_ID = tau("id")
TAU_TYPE = tau("type")
TAU_KEY = tau("key")
TAU_VALUE = tau("value")
TAU_TARGET = tau("target")
TAU_RPC = tau("rpc")
TAU_FOUND = tau("found")


def peer(i):
    return node_iri(format(i, "04x")), format(i, "04x")


def message(sender, sender_id, kind=None, **props):
    quads = [Quad(TAU_DEFAULT, sender, TAU_ID, hexlit(sender_id))]
    if kind is not None:
        m = Blank("m")
        quads.append(Quad(TAU_DEFAULT, m, TAU_TYPE, tau(kind)))
        for pred, obj in props.items():
            quads.append(Quad(TAU_DEFAULT, m, tau(pred), obj))
    return canonical_quads(quads)


def fresh_pair():
    node = NodeState(SELF_ID, DHT, bits=16, k=4)
    ref = ReferenceDht(SELF_ID, bits=16, k=4)
    return node, ref


def exchange(node, ref, batch):
    """Feed one tick's batch to both implementations; assert equal sends."""
    for frm, body in batch:
        node.ingest(frm, body)
    sends = {a.peer.text: a.payload for a in node.tick() if isinstance(a, Send)}
    expected = {p: canonical_quads(quads) for p, quads in ref.handle_tick(batch).items()}
    assert sends == expected
    return sends


def rt_pairs(node):
    return {
        (q.sub.text, q.obj.lexical)
        for q in node.store.quads_in_context(STATE_RT)
        if q.pred == tau("peerId")
    }


class TestPing:
    def test_known_peer_pong_no_routing_change(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        exchange(node, ref, [(p, message(p, pid, "Ping"))])
        before = rt_pairs(node)
        out = exchange(node, ref, [(p, message(p, pid, "Ping"))])
        assert rt_pairs(node) == before
        assert b"Pong" in out[p.text]

    def test_new_peer_added_when_bucket_has_room(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        out = exchange(node, ref, [(p, message(p, pid, "Ping"))])
        assert b"Pong" in out[p.text]
        assert rt_pairs(node) == {(p.text, pid)}

    def test_two_pings_two_pongs(self):
        node, ref = fresh_pair()
        p1, id1 = peer(0x1000)
        p2, id2 = peer(0x00BB)
        for frm, body in [(p1, message(p1, id1, "Ping")), (p2, message(p2, id2, "Ping"))]:
            node.ingest(frm, body)
        sends = [a for a in node.tick() if isinstance(a, Send)]
        assert len(sends) == 2
        assert [s.peer.text for s in sends] == sorted(s.peer.text for s in sends)


class TestStore:
    def test_store_asserts_kv(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        exchange(node, ref, [(p, message(p, pid, "Store", key=hexlit("beef"), value=string("v")))])
        assert len(node.store.quads_in_context(STATE_KV)) == 1

    def test_store_twice_unchanged(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        body = message(p, pid, "Store", key=hexlit("beef"), value=string("v"))
        exchange(node, ref, [(p, body)])
        exchange(node, ref, [(p, body)])
        assert len(node.store.quads_in_context(STATE_KV)) == 1

    def test_two_keys(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        exchange(node, ref, [(p, message(p, pid, "Store", key=hexlit("beef"), value=string("v")))])
        exchange(node, ref, [(p, message(p, pid, "Store", key=hexlit("cafe"), value=string("w")))])
        assert len(node.store.quads_in_context(STATE_KV)) == 2


def brute_force_k_closest(pairs, target_hex, k=4):
    t = int(target_hex, 16)
    out = set()
    for p, pid in pairs:
        d = int(pid, 16) ^ t
        closer = {qid for _, qid in pairs if int(qid, 16) ^ t < d}
        if len(closer) < k:
            out.add((p, pid))
    return out


def found_pairs(payload: bytes):
    from rulenet.parser import parse

    doc = parse(payload)
    return {
        (q.obj.items[0].text, q.obj.items[1].lexical)
        for q in doc.facts
        if q.pred == TAU_FOUND
    }


class TestFindNode:
    def prime(self, node, ref, ids):
        for i in ids:
            p, pid = peer(i)
            exchange(node, ref, [(p, message(p, pid, "Ping"))])

    def test_fewer_than_k_returns_all(self):
        node, ref = fresh_pair()
        self.prime(node, ref, [0x2000, 0x4000])
        p, pid = peer(0x00BB)
        out = exchange(node, ref, [(p, message(p, pid, "FindNode", target=hexlit("2001"), rpc=Iri("ex:r1")))])
        assert len(found_pairs(out[p.text])) >= 2

    def test_eight_known_returns_four_closest(self):
        node, ref = fresh_pair()
        ids = [0x2000, 0x2001, 0x2002, 0x2003, 0x9000, 0x9001, 0x9002, 0x9003]
        self.prime(node, ref, ids)
        pairs = rt_pairs(node)
        p, pid = peer(0x00BB)
        out = exchange(node, ref, [(p, message(p, pid, "FindNode", target=hexlit("2000"), rpc=Iri("ex:r2")))])
        got = found_pairs(out[p.text])
        assert got == brute_force_k_closest(pairs | {(p.text, pid)} if (p.text, pid) in rt_pairs(node) else pairs, "2000")

    def test_no_known_peers_empty_reply(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        out = exchange(node, ref, [(p, message(p, pid, "FindNode", target=hexlit("2000"), rpc=Iri("ex:r3")))])
        # The requester itself is admitted during the tick, so the reply may
        # contain it; with a fresh table and one sender that is the only entry.
        assert found_pairs(out[p.text]) <= {(p.text, pid)}
        assert b"Nodes" in out[p.text]


class TestFindValue:
    def test_hit_returns_value_not_nodes(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        exchange(node, ref, [(p, message(p, pid, "Store", key=hexlit("beef"), value=string("v")))])
        out = exchange(node, ref, [(p, message(p, pid, "FindValue", key=hexlit("beef"), rpc=Iri("ex:r")))])
        assert b"#Value" in out[p.text]
        assert b"#Nodes" not in out[p.text]

    def test_miss_behaves_like_find_node(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        q, qid = peer(0x2000)
        exchange(node, ref, [(q, message(q, qid, "Ping"))])
        out = exchange(node, ref, [(p, message(p, pid, "FindValue", key=hexlit("beef"), rpc=Iri("ex:r")))])
        assert b"#Nodes" in out[p.text]
        assert found_pairs(out[p.text]) == brute_force_k_closest(rt_pairs(node), "beef")

    def test_hit_and_find_node_same_tick(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)
        exchange(node, ref, [(p, message(p, pid, "Store", key=hexlit("beef"), value=string("v")))])
        batch = [
            (p, message(p, pid, "FindValue", key=hexlit("beef"), rpc=Iri("ex:r1"))),
            (p, message(p, pid, "FindNode", target=hexlit("0001"), rpc=Iri("ex:r2"))),
        ]
        out = exchange(node, ref, batch)
        assert b"#Value" in out[p.text]
        assert b"#Nodes" in out[p.text]


class TestRoutingUpdate:
    def test_first_contact_bucket_index(self):
        node, ref = fresh_pair()
        p, pid = peer(0x00BB)  # xor with 00aa = 0x0011 -> bucket 4
        exchange(node, ref, [(p, message(p, pid, "Ping"))])
        buckets = {
            (q.sub.text, int(q.obj.lexical))
            for q in node.store.quads_in_context(STATE_RT)
            if q.pred == tau("inBucket")
        }
        assert buckets == {(p.text, 4)}

    def test_full_bucket_drops_newcomer(self):
        node, ref = fresh_pair()
        # Bucket 15 holds ids with the top bit different from 0x00aa.
        ids = [0x8001, 0x8002, 0x8003, 0x8004]
        for i in ids:
            p, pid = peer(i)
            exchange(node, ref, [(p, message(p, pid, "Ping"))])
        before = rt_pairs(node)
        assert len(before) == 4
        p, pid = peer(0x8005)
        exchange(node, ref, [(p, message(p, pid, "Ping"))])
        assert rt_pairs(node) == before

    def test_message_from_self_no_change(self):
        node, ref = fresh_pair()
        out = exchange(node, ref, [(node.self_iri, message(node.self_iri, SELF_ID, "Ping"))])
        assert rt_pairs(node) == set()
        # It still answers the ping; it just never routes to itself.
        assert b"Pong" in out[node.self_iri.text]

    def test_same_tick_same_bucket_admits_lowest_id(self):
        node, ref = fresh_pair()
        p1, id1 = peer(0x8002)
        p2, id2 = peer(0x8001)
        exchange(node, ref, [(p1, message(p1, id1, "Ping")), (p2, message(p2, id2, "Ping"))])
        assert rt_pairs(node) == {(p2.text, id2)}

    def test_bucket_capacity_bound_under_random_flood(self):
        rng = random.Random(31337)
        node, ref = fresh_pair()
        peers = [peer(i) for i in rng.sample(range(1, 0xFFFF), 40) if format(i, "04x") != SELF_ID]
        for _ in range(30):
            batch = []
            for _ in range(rng.randrange(1, 4)):
                p, pid = rng.choice(peers)
                batch.append((p, message(p, pid, "Ping")))
            exchange(node, ref, batch)
            per_bucket = {}
            for q in node.store.quads_in_context(STATE_RT):
                if q.pred == tau("inBucket"):
                    per_bucket.setdefault(int(q.obj.lexical), set()).add(q.sub.text)
            assert all(len(members) <= 4 for members in per_bucket.values())


class TestReferenceEquivalence:
    def test_empty_sequence(self):
        ref = ReferenceDht(SELF_ID, bits=16, k=4)
        assert ref.handle_tick([]) == {}

    def test_random_sequences(self):
        keys = [hexlit(h) for h in ("beef", "cafe", "f00d")]
        values = [string(v) for v in ("v1", "v2")]
        for seed in range(30):
            rng = random.Random(seed)
            node, ref = fresh_pair()
            peers = [peer(i) for i in rng.sample(range(1, 0xFFFF), 8)]
            total = 0
            while total < 30:
                batch = []
                for _ in range(rng.randrange(0, 4)):
                    p, pid = rng.choice(peers)
                    kind = rng.choice(["Ping", "Store", "FindNode", "FindValue", None])
                    if kind == "Store":
                        body = message(p, pid, kind, key=rng.choice(keys), value=rng.choice(values))
                    elif kind == "FindNode":
                        body = message(p, pid, kind, target=hexlit(format(rng.randrange(0x10000), "04x")), rpc=Iri(f"ex:r{total}"))
                    elif kind == "FindValue":
                        body = message(p, pid, kind, key=rng.choice(keys), rpc=Iri(f"ex:r{total}"))
                    else:
                        body = message(p, pid, kind)
                    batch.append((p, body))
                    total += 1
                exchange(node, ref, batch)


class TestLookup:
    def lookup_seed(self, target, value_mode=True, name="ex:lkp"):
        L = Iri(name)
        quads = [
            Quad(TAU_DEFAULT, L, TAU_TYPE, tau("Lookup")),
            Quad(TAU_DEFAULT, L, TAU_TARGET, hexlit(target)),
        ]
        if value_mode:
            quads.append(Quad(TAU_DEFAULT, L, tau("findValue"), boolean(True)))
        return L, quads

    def test_empty_routing_table_immediately_done(self):
        node = NodeState(SELF_ID, DHT, bits=16, k=4)
        L, quads = self.lookup_seed("2000")
        node.inject_user(quads)
        actions = node.tick()
        assert [a for a in actions if isinstance(a, Send)] == []
        done = node.store.match(Quad(STATE_LK, L, tau("done"), Var("d")))
        assert len(done) == 1

    def test_direct_neighbor_value_lookup(self):
        a = NodeState(SELF_ID, DHT, bits=16, k=4)
        b = NodeState("2000", DHT, bits=16, k=4)
        # b holds the key and a knows b.
        b.inject_user([
            Quad(TAU_DEFAULT, Blank("s"), TAU_TYPE, tau("Store")),
            Quad(TAU_DEFAULT, Blank("s"), TAU_KEY, hexlit("2000")),
            Quad(TAU_DEFAULT, Blank("s"), TAU_VALUE, string("hello")),
        ])
        b.tick()
        a.ingest(b.self_iri, message(b.self_iri, "2000", "Ping"))
        a.tick()
        L, quads = self.lookup_seed("2000")
        a.inject_user(quads)
        sends = [x for x in a.tick() if isinstance(x, Send)]
        assert len(sends) == 1 and sends[0].peer.text == b.self_iri.text
        assert b"FindValue" in sends[0].payload
        b.ingest(a.self_iri, sends[0].payload)
        reply = [x for x in b.tick() if isinstance(x, Send)]
        assert len(reply) == 1 and b"#Value" in reply[0].payload
        a.ingest(b.self_iri, reply[0].payload)
        assert [x for x in a.tick() if isinstance(x, Send)] == []
        got = a.store.match(Quad(STATE_LK, L, TAU_VALUE, Var("v")))
        assert got == [{"v": string("hello")}]
        done = a.store.match(Quad(STATE_LK, L, tau("done"), Var("d")))
        assert len(done) == 1
        # Completed lookups stay quiet.
        assert [x for x in a.tick() if isinstance(x, Send)] == []

    def test_one_probe_in_flight(self):
        a = NodeState(SELF_ID, DHT, bits=16, k=4)
        for i in (0x2000, 0x2100):
            p, pid = peer(i)
            a.ingest(p, message(p, pid, "Ping"))
        a.tick()
        L, quads = self.lookup_seed("2000", value_mode=False)
        a.inject_user(quads)
        first = [x for x in a.tick() if isinstance(x, Send)]
        assert len(first) == 1
        # No reply yet: the lookup waits instead of probing the next peer.
        assert [x for x in a.tick() if isinstance(x, Send)] == []


class TestStrataGolden:
    def test_strata_count_matches_golden(self):
        golden = int(GOLDEN.read_text().strip())
        assert len(DHT.strata) == golden

    def test_params_validation(self):
        with pytest.raises(ValueError):
            DhtParams(k=0)
        with pytest.raises(ValueError):
            DhtParams(id_bits=12)
