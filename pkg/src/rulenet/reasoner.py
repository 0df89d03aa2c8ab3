"""Forward-chaining inference over a quad store.

Rules are premise conjunctions (patterns, builtin calls, @not sub-graphs)
with conclusion templates. Saturation evaluates stratum by stratum: within a
stratum rules fire to a fixpoint using semi-naive rounds (after the first
round every join touches at least one quad derived in the previous round);
conclusions are collected per round and inserted as a batch, so the fixpoint
and the round count do not depend on rule or premise ordering.

Stratification is checked on negative dependencies only: a rule that negates
predicate P must sit in a strictly higher stratum than every rule concluding
P. Positive dependencies may point at higher strata; such premises then read
the state the store had when their stratum ran, which is exactly the
snapshot behaviour the DHT ruleset relies on (e.g. bucket occupancy is judged
against the routing table as of the start of the tick).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import BuiltinError, ValidationError
from .ns import TAU, TAU_DEFAULT
from .store import QuadStore
from .terms import (
    HEX,
    INTEGER,
    Binding,
    Iri,
    ListTerm,
    Literal,
    NotExists,
    Quad,
    Term,
    Var,
    apply_binding,
    apply_binding_quad,
    integer,
    is_ground,
    quad_is_ground,
    quad_vars,
    term_text,
)

Premise = Union[Quad, NotExists]


@dataclass(frozen=True)
class Rule:
    premises: Tuple[Premise, ...]
    conclusions: Tuple[Quad, ...]
    origin: Term = TAU_DEFAULT
    line: Optional[int] = None

    def label(self) -> str:
        where = f"line {self.line}" if self.line is not None else "unknown line"
        return f"rule at {where} in {term_text(self.origin)}"


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------
#
# The catalog is closed: every builtin is a pure function of ground inputs and
# yields zero or one extended bindings, which keeps termination arguable.

_ATOMIC = (Iri, Literal)


def _ground_or_fail(name: str, t: Term) -> Term:
    if isinstance(t, _ATOMIC):
        return t
    if not is_ground(t):
        raise BuiltinError(f"{name}: argument {term_text(t)} is unbound")
    return t


def _emit(binding: Binding, obj: Term, result: Term) -> List[Binding]:
    if isinstance(obj, Var):
        out = dict(binding)
        out[obj.name] = result
        return [out]
    return [binding] if obj == result else []


def _hex_arg(name: str, t: Term) -> Literal:
    if not (isinstance(t, Literal) and t.tag == HEX):
        raise BuiltinError(f"{name}: expected a hex literal, got {term_text(t)}")
    return t


def _hex_pair(name: str, subject: Term) -> Tuple[Literal, Literal]:
    if not (isinstance(subject, ListTerm) and len(subject.items) == 2):
        raise BuiltinError(f"{name}: subject must be a 2-element list")
    a = _hex_arg(name, _ground_or_fail(name, subject.items[0]))
    b = _hex_arg(name, _ground_or_fail(name, subject.items[1]))
    if len(a.lexical) != len(b.lexical):
        raise BuiltinError(f"{name}: operands must have equal widths")
    return a, b


def _int_arg(name: str, t: Term) -> int:
    if not (isinstance(t, Literal) and t.tag == INTEGER):
        raise BuiltinError(f"{name}: expected an integer literal, got {term_text(t)}")
    return int(t.lexical)


def _bi_equals(s, o, b):
    _ground_or_fail("tau:equals", s)
    _ground_or_fail("tau:equals", o)
    return [b] if s == o else []


def _bi_not_equals(s, o, b):
    _ground_or_fail("tau:notEquals", s)
    _ground_or_fail("tau:notEquals", o)
    return [b] if s != o else []


def _bi_xor(s, o, b):
    a, c = _hex_pair("tau:xor", s)
    value = int(a.lexical, 16) ^ int(c.lexical, 16)
    result = Literal(format(value, f"0{len(a.lexical)}x"), HEX)
    return _emit(b, o, result)


def _bi_bucket_index(s, o, b):
    a, c = _hex_pair("tau:bucketIndex", s)
    value = int(a.lexical, 16) ^ int(c.lexical, 16)
    if value == 0:
        raise BuiltinError("tau:bucketIndex: xor distance is zero")
    return _emit(b, o, integer(value.bit_length() - 1))


def _bi_hex_less(s, o, b):
    a = _hex_arg("tau:hexLess", _ground_or_fail("tau:hexLess", s))
    c = _hex_arg("tau:hexLess", _ground_or_fail("tau:hexLess", o))
    return [b] if int(a.lexical, 16) < int(c.lexical, 16) else []


def _bi_sum(s, o, b):
    if not (isinstance(s, ListTerm) and len(s.items) == 2):
        raise BuiltinError("tau:sum: subject must be a 2-element list")
    x = _int_arg("tau:sum", _ground_or_fail("tau:sum", s.items[0]))
    y = _int_arg("tau:sum", _ground_or_fail("tau:sum", s.items[1]))
    return _emit(b, o, integer(x + y))


def _bi_int_less(s, o, b):
    x = _int_arg("tau:intLess", _ground_or_fail("tau:intLess", s))
    y = _int_arg("tau:intLess", _ground_or_fail("tau:intLess", o))
    return [b] if x < y else []


def _mailbox(prefix: str, name: str) -> Callable:
    def impl(s, o, b):
        _ground_or_fail(name, s)
        if not isinstance(s, Iri):
            raise BuiltinError(f"{name}: subject must be an IRI")
        return _emit(b, o, Iri(prefix + s.text))

    return impl


BUILTINS: Dict[str, Callable] = {
    TAU + "equals": _bi_equals,
    TAU + "notEquals": _bi_not_equals,
    TAU + "xor": _bi_xor,
    TAU + "bucketIndex": _bi_bucket_index,
    TAU + "hexLess": _bi_hex_less,
    TAU + "sum": _bi_sum,
    TAU + "intLess": _bi_int_less,
    TAU + "outbox": _mailbox("tau://out#", "tau:outbox"),
    TAU + "inbox": _mailbox("tau://in#", "tau:inbox"),
}


def is_builtin_call(pattern: Quad) -> bool:
    return isinstance(pattern.pred, Iri) and pattern.pred.text in BUILTINS


def eval_builtin(pattern: Quad, binding: Binding) -> List[Binding]:
    """Evaluate a builtin premise under a binding; 0 or 1 results."""
    subject = apply_binding(pattern.sub, binding)
    obj = apply_binding(pattern.obj, binding)
    return BUILTINS[pattern.pred.text](subject, obj, binding)


# ---------------------------------------------------------------------------
# Conjunction solving (shared by saturation, queries and @not checks)
# ---------------------------------------------------------------------------
#
# Premise lists are compiled to dispatch-ready plans once per evaluation so
# the inner join loop does no per-step classification.

def _compile(premises: Sequence[Premise]) -> tuple:
    plan = []
    for item in premises:
        if isinstance(item, NotExists):
            plan.append(("not", _compile(item.patterns)))
        elif is_builtin_call(item):
            plan.append(("builtin", BUILTINS[item.pred.text], item))
        else:
            plan.append(("match", item))
    return tuple(plan)


def _solve(
    plan: tuple,
    idx: int,
    store: QuadStore,
    binding: Binding,
    delta: Optional[QuadStore],
    delta_pos: int,
) -> Iterator[Binding]:
    if idx == len(plan):
        yield binding
        return
    entry = plan[idx]
    kind = entry[0]
    if kind == "match":
        source = delta if idx == delta_pos else store
        for b in source.match_iter(entry[1], binding):
            yield from _solve(plan, idx + 1, store, b, delta, delta_pos)
    elif kind == "builtin":
        pattern = entry[2]
        subject = apply_binding(pattern.sub, binding)
        obj = apply_binding(pattern.obj, binding)
        for b in entry[1](subject, obj, binding):
            yield from _solve(plan, idx + 1, store, b, delta, delta_pos)
    else:
        if not _exists(entry[1], store, binding):
            yield from _solve(plan, idx + 1, store, binding, delta, delta_pos)


def _exists(plan: tuple, store: QuadStore, binding: Binding) -> bool:
    for _ in _solve(plan, 0, store, binding, None, -1):
        return True
    return False


def query(store: QuadStore, premises: Sequence[Premise]) -> List[Binding]:
    """All bindings satisfying the conjunction; no rule firing.

    Results are sorted by the canonical text of the bound terms.
    """
    results = list(_solve(_compile(premises), 0, store, {}, None, -1))
    results.sort(key=lambda b: tuple((v, term_text(t)) for v, t in sorted(b.items())))
    return results


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------

def _concluded_preds(rule: Rule) -> List[Optional[str]]:
    """Predicate texts concluded by the rule; None marks a variable predicate."""
    out = []
    for c in rule.conclusions:
        out.append(c.pred.text if isinstance(c.pred, Iri) else None)
    return out


def _negated_preds(rule: Rule) -> List[Optional[str]]:
    out = []
    for p in rule.premises:
        if isinstance(p, NotExists):
            for q in p.patterns:
                if is_builtin_call(q):
                    continue
                out.append(q.pred.text if isinstance(q.pred, Iri) else None)
    return out


def _pred_matches(a: Optional[str], b: Optional[str]) -> bool:
    return a is None or b is None or a == b


def check_stratified(rules: Sequence[Rule]) -> List[List[Rule]]:
    """Validate range restriction and stratified negation; return the strata.

    Each rule is assigned the least stratum such that every predicate it
    negates is concluded only by strictly lower strata. A cycle of negative
    dependencies is an error naming the predicates involved.
    """
    rules = list(rules)
    iri_output = {TAU + "outbox", TAU + "inbox"}
    for rule in rules:
        bound: set = set()
        for p in rule.premises:
            if isinstance(p, Quad):
                bound |= quad_vars(p)
        ctx_ok: set = set()
        for p in rule.premises:
            if isinstance(p, Quad) and is_builtin_call(p) and p.pred.text in iri_output:
                if isinstance(p.obj, Var):
                    ctx_ok.add(p.obj.name)
        for c in rule.conclusions:
            if isinstance(c.pred, Iri) and c.pred.text in BUILTINS:
                raise ValidationError(f"{rule.label()}: cannot conclude builtin predicate {term_text(c.pred)}")
            for v in sorted(quad_vars(c)):
                if v not in bound:
                    raise ValidationError(f"{rule.label()}: variable ?{v} in conclusion is not bound by a positive premise")
            if isinstance(c.ctx, Var):
                if c.ctx.name not in ctx_ok:
                    raise ValidationError(
                        f"{rule.label()}: conclusion context ?{c.ctx.name} is not bound by tau:outbox or tau:inbox"
                    )
            elif not isinstance(c.ctx, Iri):
                raise ValidationError(f"{rule.label()}: conclusion context must be an IRI or a mailbox variable")

    # Edges r' -> r labelled with the predicate r negates and r' concludes.
    edges: Dict[int, List[Tuple[int, Optional[str]]]] = {i: [] for i in range(len(rules))}
    preds_by_rule = [_concluded_preds(r) for r in rules]
    for i, rule in enumerate(rules):
        for neg in _negated_preds(rule):
            for j, concluded in enumerate(preds_by_rule):
                if any(_pred_matches(neg, c) for c in concluded):
                    edges[i].append((j, neg))

    level: Dict[int, int] = {}
    state: Dict[int, int] = {}  # 0 unvisited, 1 on stack, 2 done

    def visit(i: int, stack: List[Tuple[int, Optional[str]]]):
        state[i] = 1
        best = 0
        for j, pred in edges[i]:
            if state.get(j) == 1:
                cycle = [p for _, p in stack] + [pred]
                names = " -> ".join(p if p is not None else "<var>" for p in cycle)
                raise ValidationError(f"negation cycle through predicates: {names}")
            if state.get(j, 0) == 0:
                visit(j, stack + [(j, pred)])
            best = max(best, level[j] + 1)
        level[i] = best
        state[i] = 2

    for i in range(len(rules)):
        if state.get(i, 0) == 0:
            visit(i, [])

    depth = max(level.values(), default=-1) + 1
    strata: List[List[Rule]] = [[] for _ in range(max(depth, 1) if rules else 0)]
    for i, rule in enumerate(rules):
        strata[level[i]].append(rule)
    return [s for s in strata if s]


@dataclass
class Ruleset:
    rules: Tuple[Rule, ...]
    strata: Tuple[Tuple[Rule, ...], ...] = field(default_factory=tuple)


def make_ruleset(rules: Sequence[Rule]) -> Ruleset:
    strata = check_stratified(rules)
    return Ruleset(rules=tuple(rules), strata=tuple(tuple(s) for s in strata))


# ---------------------------------------------------------------------------
# Saturation
# ---------------------------------------------------------------------------

DEFAULT_MAX_ROUNDS = 4096
DEFAULT_MAX_DERIVED = 1_000_000


@dataclass
class SaturationReport:
    derived: int
    rounds: int
    hit_limit: bool


def _rule_bindings(
    rule: Rule, plan: tuple, store: QuadStore, delta: Optional[QuadStore]
) -> Iterator[Binding]:
    try:
        if delta is None:
            yield from _solve(plan, 0, store, {}, None, -1)
            return
        for pos, entry in enumerate(plan):
            if entry[0] == "match" and delta.could_match(entry[1]):
                yield from _solve(plan, 0, store, {}, delta, pos)
    except BuiltinError as exc:
        raise BuiltinError(f"{rule.label()}: {exc}") from exc


def saturate(
    store: QuadStore,
    ruleset: Ruleset,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    max_derived: int = DEFAULT_MAX_DERIVED,
) -> SaturationReport:
    """Apply the ruleset to a fixpoint, stratum by stratum.

    Rounds count productive semi-naive iterations summed over strata. Hitting
    a limit stops evaluation and is reported, never silent.
    """
    derived = 0
    rounds = 0
    plans = {id(rule): _compile(rule.premises) for stratum in ruleset.strata for rule in stratum}
    for stratum in ruleset.strata:
        delta: Optional[QuadStore] = None
        while True:
            fresh: set = set()
            for rule in stratum:
                for binding in _rule_bindings(rule, plans[id(rule)], store, delta):
                    for template in rule.conclusions:
                        quad = apply_binding_quad(template, binding)
                        if not quad_is_ground(quad):
                            raise ValidationError(f"{rule.label()}: conclusion did not instantiate to a ground quad")
                        if quad not in store:
                            fresh.add(quad)
            if not fresh:
                break
            if rounds >= max_rounds:
                return SaturationReport(derived, rounds, True)
            rounds += 1
            delta = QuadStore()
            for quad in fresh:
                store.insert(quad)
                delta.insert(quad)
            derived += len(fresh)
            if derived > max_derived:
                return SaturationReport(derived, rounds, True)
    return SaturationReport(derived, rounds, False)
