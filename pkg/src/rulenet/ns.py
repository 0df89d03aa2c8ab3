"""Reserved IRIs and context-name conventions."""

from .terms import Iri

TAU = "tau://ns#"
SIM = "tau://sim#"
TRACE = "tau://trace#"

# Pre-declared prefixes; user redeclaration is a parse error.
RESERVED_PREFIXES = {"tau": TAU, "sim": SIM}


def tau(local: str) -> Iri:
    return Iri(TAU + local)


def sim(local: str) -> Iri:
    return Iri(SIM + local)


def trace(local: str) -> Iri:
    return Iri(TRACE + local)


TAU_DEFAULT = tau("default")
TAU_TYPE = tau("type")

# Node state layout. Contexts under tau://in#, tau://out# and tau://tmp# are
# transient: the tick loop erases them.
STATE_SELF = Iri("tau://state#self")
STATE_RT = Iri("tau://state#rt")
STATE_KV = Iri("tau://state#kv")
STATE_LK = Iri("tau://state#lk")
STATE_CFG = Iri("tau://state#cfg")
USER_IN = Iri("tau://user#in")
IN_PREFIX = "tau://in#"
OUT_PREFIX = "tau://out#"
TMP_PREFIX = "tau://tmp#"
NODE_PREFIX = "tau://node#"


def node_iri(hex_digits: str) -> Iri:
    return Iri(NODE_PREFIX + hex_digits)


def inbox_iri(peer: Iri) -> Iri:
    return Iri(IN_PREFIX + peer.text)


def outbox_iri(peer: Iri) -> Iri:
    return Iri(OUT_PREFIX + peer.text)
