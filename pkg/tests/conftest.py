"""Shared test oracles and generators.

The matcher and the naive evaluator here are written independently of the
engine's index-based matcher and semi-naive loop: brute force over all quads,
re-evaluating every rule each round. They exist to cross-check the engine,
so they deliberately avoid its code paths (builtin evaluation excepted,
which randomized rulesets do not exercise).
"""

import random
from typing import Dict, List, Optional, Sequence, Set, Tuple

import pytest

from rulenet.ns import TAU_DEFAULT
from rulenet.reasoner import Rule, Ruleset, eval_builtin, is_builtin_call
from rulenet.terms import (
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
    boolean,
    hexlit,
    integer,
    string,
)


# ---------------------------------------------------------------------------
# Brute-force matching
# ---------------------------------------------------------------------------

def bf_unify_term(pattern: Term, value: Term, binding: Binding) -> Optional[Binding]:
    if isinstance(pattern, Var):
        if pattern.name in binding:
            return binding if binding[pattern.name] == value else None
        out = dict(binding)
        out[pattern.name] = value
        return out
    if isinstance(pattern, ListTerm):
        if not isinstance(value, ListTerm) or len(pattern.items) != len(value.items):
            return None
        for p, v in zip(pattern.items, value.items):
            binding = bf_unify_term(p, v, binding)
            if binding is None:
                return None
        return binding
    return binding if pattern == value else None


def bf_unify_quad(pattern: Quad, fact: Quad, binding: Binding) -> Optional[Binding]:
    for p, v in zip(pattern.slots(), fact.slots()):
        binding = bf_unify_term(p, v, binding)
        if binding is None:
            return None
    return binding


def bf_match(quads, pattern: Quad, seed: Optional[Binding] = None) -> List[Binding]:
    seed = seed or {}
    out = []
    for q in quads:
        b = bf_unify_quad(pattern, q, seed)
        if b is not None:
            out.append(b)
    return out


def bf_solve(premises: Sequence, quads: Set[Quad], binding: Binding) -> List[Binding]:
    if not premises:
        return [binding]
    head, rest = premises[0], premises[1:]
    out = []
    if isinstance(head, NotExists):
        if not bf_solve(head.patterns, quads, binding):
            out.extend(bf_solve(rest, quads, binding))
        return out
    if is_builtin_call(head):
        for b in eval_builtin(head, binding):
            out.extend(bf_solve(rest, quads, b))
        return out
    for b in bf_match(quads, head, binding):
        out.extend(bf_solve(rest, quads, b))
    return out


# ---------------------------------------------------------------------------
# Naive evaluator (re-evaluates every rule each round, tracks justifications)
# ---------------------------------------------------------------------------

def naive_saturate(quads: Set[Quad], ruleset: Ruleset):
    """Returns (final quad set, justifications).

    justifications maps each derived quad to (rule, binding, state) where
    state is a frozenset snapshot of the facts visible when the rule fired.
    """
    from rulenet.terms import apply_binding_quad

    current = set(quads)
    just: Dict[Quad, Tuple[Rule, Binding, frozenset]] = {}
    for stratum in ruleset.strata:
        while True:
            fresh = {}
            snapshot = frozenset(current)
            for rule in stratum:
                for binding in bf_solve(rule.premises, current, {}):
                    for template in rule.conclusions:
                        q = apply_binding_quad(template, binding)
                        if q not in current and q not in fresh:
                            fresh[q] = (rule, binding, snapshot)
            if not fresh:
                break
            current.update(fresh)
            just.update(fresh)
    return current, just


# ---------------------------------------------------------------------------
# Random data generators (seeded, deterministic)
# ---------------------------------------------------------------------------

IRIS = [Iri(f"ex:c{i}") for i in range(6)]
PREDS = [Iri(f"ex:p{i}") for i in range(3)]
CTXS = [TAU_DEFAULT, Iri("ex:g1"), Iri("ex:g2")]


def rand_leaf_term(rng: random.Random) -> Term:
    pick = rng.randrange(6)
    if pick == 0:
        return rng.choice(IRIS)
    if pick == 1:
        return Blank(f"x{rng.randrange(3)}")
    if pick == 2:
        return integer(rng.randrange(-50, 50))
    if pick == 3:
        return string(rng.choice(["", "hi", 'quo"te', "back\\slash", "plain text"]))
    if pick == 4:
        return boolean(rng.random() < 0.5)
    return hexlit(rng.choice(["00", "0a2f", "ffff", "0123456789abcdef"]))


def rand_term(rng: random.Random, depth: int = 0) -> Term:
    if depth < 2 and rng.random() < 0.25:
        if rng.random() < 0.6:
            return ListTerm(tuple(rand_term(rng, depth + 1) for _ in range(rng.randrange(0, 3))))
        items = tuple(
            Quad(rng.choice(CTXS), rand_term(rng, depth + 1), rng.choice(PREDS), rand_term(rng, depth + 1))
            for _ in range(rng.randrange(1, 3))
        )
        return GraphTerm(items)
    return rand_leaf_term(rng)


def rand_ground_quad(rng: random.Random) -> Quad:
    return Quad(rng.choice(CTXS), rand_term(rng), rng.choice(PREDS), rand_term(rng))


def rand_simple_fact(rng: random.Random) -> Quad:
    return Quad(TAU_DEFAULT, rng.choice(IRIS), rng.choice(PREDS), rng.choice(IRIS))


def rand_rule(rng: random.Random, allow_not: bool) -> Rule:
    vars_pool = [Var("x"), Var("y"), Var("z")]

    def pattern_term(bound):
        r = rng.random()
        if r < 0.5 and bound:
            return rng.choice(bound)
        if r < 0.75:
            return rng.choice(vars_pool)
        return rng.choice(IRIS)

    premises: List = []
    bound: List[Var] = []
    for _ in range(rng.randrange(1, 3)):
        s = pattern_term(bound)
        o = pattern_term(bound)
        for t in (s, o):
            if isinstance(t, Var) and t not in bound:
                bound.append(t)
        premises.append(Quad(TAU_DEFAULT, s, rng.choice(PREDS), o))
    if allow_not and rng.random() < 0.5:
        s = rng.choice(bound) if bound and rng.random() < 0.7 else rng.choice(IRIS)
        premises.append(NotExists((Quad(TAU_DEFAULT, s, rng.choice(PREDS), rng.choice(IRIS + bound)),)))
    if not bound:
        concl_terms = [rng.choice(IRIS), rng.choice(IRIS)]
    else:
        concl_terms = [rng.choice(bound + IRIS), rng.choice(bound + IRIS)]
    conclusions = (Quad(TAU_DEFAULT, concl_terms[0], rng.choice(PREDS), concl_terms[1]),)
    return Rule(premises=tuple(premises), conclusions=conclusions)


def rand_ruleset(rng: random.Random, with_not: bool = True) -> Ruleset:
    """Up to 5 rules over 3 predicates; retries until stratification accepts."""
    from rulenet.reasoner import make_ruleset
    from rulenet.errors import ValidationError

    for _ in range(200):
        rules = [rand_rule(rng, with_not) for _ in range(rng.randrange(1, 6))]
        try:
            return make_ruleset(rules)
        except ValidationError:
            continue
    raise AssertionError("could not generate a stratifiable ruleset")


@pytest.fixture
def rng():
    return random.Random(20240801)
