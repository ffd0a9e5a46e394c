"""Bounded Dolev-Yao deduction over a :class:`ProtocolSpec`.

The adversary observes every message on the air, decomposes tuples,
decrypts under known keys, and composes tuples, ciphertexts, hashes and
KDF outputs.  Composition is restricted to the finite universe of subterms
of everything in play (observed traffic, initial knowledge, KDF outputs,
and the query goal), which keeps the closure finite.  Derivation depth is
bounded; when the bound cuts off a non-empty frontier the knowledge base is
flagged and negative answers become ``Uncertain``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .proto_model import Identifier, MessageSchema, ProtocolSpec, SecurityProperty
from .terms import Atom, Hash, Kdf, Opaque, SymEnc, Term, Tup, from_json, sort_key, subterms, to_json

log = logging.getLogger(__name__)

DEFAULT_DEPTH_BUDGET = 8

MITM = "mitm_position"
_KNOWS = re.compile(r"^attacker_knows\((?P<name>[^)]+)\)$")


class AnalyzerError(ValueError):
    pass


# --- spec -> terms ------------------------------------------------------------


def term_of(spec: ProtocolSpec, name: str) -> Term:
    """Symbolic term for a declared identifier or key (keys resolve through KDF rules)."""
    if spec.has_identifier(name):
        return Atom(name)
    if not spec.has_key(name):
        raise AnalyzerError(f"unknown term {name!r}")
    rule = spec.kdf_rule(name)
    if rule is None:
        return Atom(name)
    inputs = tuple(term_of(spec, i) for i in rule.inputs)
    if rule.op == "kdf":
        return Kdf(name, inputs)
    return Opaque(rule.op, inputs)


def protect(spec: ProtocolSpec, ident: Identifier, value: Term) -> Term:
    """Wire form of a field: optional encryption, then an optional MAC."""
    prot = ident.protection
    body = value
    if prot.enc_key:
        body = SymEnc(body, term_of(spec, prot.enc_key))
    if prot.int_key:
        body = Tup((body, Hash(Tup((body, term_of(spec, prot.int_key))))))
    return body


def message_term(spec: ProtocolSpec, msg: MessageSchema, overrides: dict[str, Term] | None = None) -> Term:
    overrides = overrides or {}
    parts = [Atom(f"msg:{msg.name}")]
    for f in msg.fields:
        parts.append(protect(spec, spec.identifier(f), overrides.get(f, Atom(f))))
    body = Tup(tuple(parts))
    if msg.channel_key:
        body = SymEnc(body, term_of(spec, msg.channel_key))
    return body


def kdf_terms(spec: ProtocolSpec) -> list[Term]:
    return [term_of(spec, r.output_key) for r in spec.kdf_rules]


def parse_assumption(atom: str) -> tuple[str, str | None]:
    atom = atom.strip()
    if atom in (MITM, "mitm"):
        return (MITM, None)
    m = _KNOWS.match(atom)
    if m:
        return ("knows", m.group("name").strip())
    raise AnalyzerError(f"unrecognised assumption {atom!r}")


def normalise_assumptions(assumptions: Iterable[str]) -> frozenset[str]:
    out = set()
    for a in assumptions:
        kind, name = parse_assumption(a)
        out.add(MITM if kind == MITM else f"attacker_knows({name})")
    return frozenset(out)


def initial_knowledge(spec: ProtocolSpec, assumptions: Iterable[str]) -> dict[Term, str]:
    """Map of initially known terms to the assumption atom granting them."""
    out: dict[Term, str] = {}
    for a in sorted(normalise_assumptions(set(assumptions) | set(spec.assumptions))):
        kind, name = parse_assumption(a)
        if kind == "knows":
            if not (spec.has_identifier(name) or spec.has_key(name)):
                raise AnalyzerError(f"assumption names undeclared term {name!r}")
            out[term_of(spec, name)] = a
    return out


# --- knowledge closure --------------------------------------------------------


@dataclass(frozen=True)
class Step:
    rule: str
    premises: tuple
    conclusion: Term

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "premises": [to_json(p) for p in self.premises],
            "conclusion": to_json(self.conclusion),
            "text": f"{self.rule}: {', '.join(map(str, self.premises)) or '-'} |- {self.conclusion}",
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Step":
        return cls(obj["rule"], tuple(from_json(p) for p in obj["premises"]), from_json(obj["conclusion"]))


@dataclass
class KnowledgeBase:
    terms: frozenset
    derivation_log: dict
    depths: dict
    depth_budget: int
    budget_exceeded: bool
    universe: frozenset = field(repr=False, default=frozenset())

    def __contains__(self, t: Term) -> bool:
        return t in self.terms

    @property
    def unsupported(self) -> bool:
        return any(isinstance(t, Opaque) for t in self.universe)


def _step_key(step: Step) -> tuple:
    return (step.rule, tuple(sort_key(p) for p in step.premises))


def _one_round(known: dict, universe: Iterable[Term]) -> dict[Term, Step]:
    """All conclusions reachable by one rule application from ``known``, best step each."""
    found: dict[Term, Step] = {}

    def offer(step: Step) -> None:
        if step.conclusion in known:
            return
        cur = found.get(step.conclusion)
        if cur is None or _step_key(step) < _step_key(cur):
            found[step.conclusion] = step

    for t in known:
        if isinstance(t, Tup):
            for item in t.items:
                offer(Step("project", (t,), item))
        elif isinstance(t, SymEnc) and t.key in known:
            offer(Step("decrypt", (t, t.key), t.payload))
    for u in universe:
        if u in known:
            continue
        if isinstance(u, Tup):
            if all(i in known for i in u.items):
                offer(Step("tuple", u.items, u))
        elif isinstance(u, SymEnc):
            if u.payload in known and u.key in known:
                offer(Step("encrypt", (u.payload, u.key), u))
        elif isinstance(u, Hash):
            if u.arg in known:
                offer(Step("hash", (u.arg,), u))
        elif isinstance(u, Kdf):
            if all(i in known for i in u.inputs):
                offer(Step("kdf", u.inputs, u))
    return found


def close_knowledge(
    initial,
    observed: Iterable[Term] = (),
    kdf_rules: Iterable[Term] = (),
    depth_budget: int = DEFAULT_DEPTH_BUDGET,
    goals: Iterable[Term] = (),
) -> KnowledgeBase:
    """Least fixpoint of the deduction rules, cut off at ``depth_budget``.

    ``initial`` is either a set of terms (depth 0) or a previous
    :class:`KnowledgeBase`, whose recorded depths are kept so that closing a
    closure is the identity.  ``kdf_rules`` are the derivable key terms.
    """
    if depth_budget < 1:
        raise AnalyzerError("depth_budget must be >= 1")
    observed = list(observed)
    known: dict[Term, int] = {}
    steps: dict[Term, Step] = {}
    if isinstance(initial, KnowledgeBase):
        known.update(initial.depths)
        steps.update(initial.derivation_log)
        seeds = set(initial.universe)
    else:
        seeds = set()
        for t in sorted(set(initial), key=sort_key):
            known[t] = 0
            steps[t] = Step("assume", (), t)
    for t in observed:
        if t not in known:
            known[t] = 0
            steps[t] = Step("observe", (), t)

    universe: set[Term] = set()
    for t in [*seeds, *known, *kdf_rules, *goals]:
        universe |= subterms(t)
    ordered_universe = sorted(universe, key=sort_key)

    # Layer by derivation depth: every term of depth D-1 is known before
    # depth D is attempted, so each conclusion gets its shortest derivation.
    for d in range(1, depth_budget + 1):
        avail = {t: k for t, k in known.items() if k <= d - 1}
        new = _one_round(avail, ordered_universe)
        for concl, step in new.items():
            if concl not in known or known[concl] > d:
                known[concl] = d
                steps[concl] = step
        if not new and max(known.values(), default=0) < d:
            break
    exceeded = bool(_one_round(known, ordered_universe))
    return KnowledgeBase(
        terms=frozenset(known),
        derivation_log=steps,
        depths=dict(known),
        depth_budget=depth_budget,
        budget_exceeded=exceeded,
        universe=frozenset(universe),
    )


# --- traces and verdicts ------------------------------------------------------


@dataclass(frozen=True)
class AttackTrace:
    goal: Term
    steps: tuple
    assumptions_used: frozenset = frozenset()

    def to_json(self) -> dict:
        return {
            "goal": to_json(self.goal),
            "goal_text": str(self.goal),
            "steps": [s.to_json() for s in self.steps],
            "assumptions": sorted(self.assumptions_used),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttackTrace":
        return cls(
            goal=from_json(obj["goal"]),
            steps=tuple(Step.from_json(s) for s in obj["steps"]),
            assumptions_used=frozenset(obj.get("assumptions", ())),
        )


def extract_trace(kb: KnowledgeBase, goal: Term, granted: dict[Term, str] | None = None) -> AttackTrace:
    """Post-order walk of the derivation log from ``goal``; leaves come first."""
    if goal not in kb:
        raise AnalyzerError(f"{goal} is not derivable")
    granted = granted or {}
    ordered: list[Step] = []
    seen: set[Term] = set()

    def visit(t: Term) -> None:
        if t in seen:
            return
        seen.add(t)
        step = kb.derivation_log[t]
        for p in step.premises:
            visit(p)
        ordered.append(step)

    visit(goal)
    used = {granted[s.conclusion] for s in ordered if s.rule == "assume" and s.conclusion in granted}
    return AttackTrace(goal=goal, steps=tuple(ordered), assumptions_used=frozenset(used))


def _rule_holds(step: Step) -> bool:
    p, c = step.premises, step.conclusion
    if step.rule == "project":
        return len(p) == 1 and isinstance(p[0], Tup) and c in p[0].items
    if step.rule == "decrypt":
        return len(p) == 2 and isinstance(p[0], SymEnc) and p[0].key == p[1] and p[0].payload == c
    if step.rule == "tuple":
        return isinstance(c, Tup) and c.items == p
    if step.rule == "encrypt":
        return len(p) == 2 and c == SymEnc(p[0], p[1])
    if step.rule == "hash":
        return len(p) == 1 and c == Hash(p[0])
    if step.rule == "kdf":
        return isinstance(c, Kdf) and c.inputs == p
    return False


def replay_trace(trace: AttackTrace, initial: Iterable[Term], observed: Iterable[Term]) -> bool:
    """Re-check a trace step by step from scratch, independently of the engine."""
    initial, observed = set(initial), set(observed)
    known: set[Term] = set()
    for step in trace.steps:
        if step.rule == "assume":
            ok = not step.premises and step.conclusion in initial
        elif step.rule == "observe":
            ok = not step.premises and step.conclusion in observed
        else:
            ok = all(q in known for q in step.premises) and _rule_holds(step)
        if not ok:
            return False
        known.add(step.conclusion)
    return trace.goal in known


class VerdictKind(str, Enum):
    SAFE = "Safe"
    ATTACK = "AttackTraceFound"
    UNCERTAIN = "Uncertain"


BUDGET_EXHAUSTED = "budget-exhausted"
UNSUPPORTED = "unsupported-construct"
FUZZ_CONTRADICTION = "fuzz-contradiction"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    trace: AttackTrace | None = None
    reason: str | None = None

    @classmethod
    def safe(cls) -> "Verdict":
        return cls(VerdictKind.SAFE)

    @classmethod
    def attack(cls, trace: AttackTrace) -> "Verdict":
        return cls(VerdictKind.ATTACK, trace=trace)

    @classmethod
    def uncertain(cls, reason: str) -> "Verdict":
        return cls(VerdictKind.UNCERTAIN, reason=reason)

    @property
    def is_attack(self) -> bool:
        return self.kind is VerdictKind.ATTACK

    @property
    def is_safe(self) -> bool:
        return self.kind is VerdictKind.SAFE

    @property
    def is_uncertain(self) -> bool:
        return self.kind is VerdictKind.UNCERTAIN

    def to_json(self) -> dict:
        out: dict = {"verdict": self.kind.value}
        if self.reason:
            out["reason"] = self.reason
        if self.trace is not None:
            out["trace"] = self.trace.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Verdict":
        trace = AttackTrace.from_json(obj["trace"]) if "trace" in obj else None
        return cls(VerdictKind(obj["verdict"]), trace=trace, reason=obj.get("reason"))

    def __str__(self) -> str:
        return self.kind.value + (f"({self.reason})" if self.reason else "")


@dataclass(frozen=True)
class Scenario:
    """Everything a query needs: initial knowledge, traffic, derivable keys."""

    initial: dict
    observed: tuple
    kdf: tuple


def scenario(spec: ProtocolSpec, assumptions: Iterable[str] = ()) -> Scenario:
    return Scenario(
        initial=initial_knowledge(spec, assumptions),
        observed=tuple(message_term(spec, m) for m in spec.messages),
        kdf=tuple(kdf_terms(spec)),
    )


def _negative(kb: KnowledgeBase) -> Verdict:
    if kb.unsupported:
        return Verdict.uncertain(UNSUPPORTED)
    if kb.budget_exceeded:
        return Verdict.uncertain(BUDGET_EXHAUSTED)
    return Verdict.safe()


def query_confidentiality(
    spec: ProtocolSpec,
    target: str,
    assumptions: Iterable[str] = (),
    depth_budget: int = DEFAULT_DEPTH_BUDGET,
) -> Verdict:
    """Can the adversary derive ``target`` (an identifier or key)?"""
    if not (spec.has_identifier(target) or spec.has_key(target)):
        raise AnalyzerError(f"unknown identifier {target!r}")
    sc = scenario(spec, assumptions)
    goal = term_of(spec, target)
    kb = close_knowledge(set(sc.initial), sc.observed, sc.kdf, depth_budget, goals=[goal])
    if goal in kb:
        return Verdict.attack(extract_trace(kb, goal, sc.initial))
    return _negative(kb)


def forged_variant(spec: ProtocolSpec, msg: MessageSchema, field_name: str) -> tuple[Atom, Term]:
    """Adversary-chosen value for one field and the resulting well-formed message."""
    value = Atom(f"forged:{field_name}")
    return value, message_term(spec, msg, {field_name: value})


def query_integrity(
    spec: ProtocolSpec,
    target_message: str,
    assumptions: Iterable[str] = (),
    depth_budget: int = DEFAULT_DEPTH_BUDGET,
) -> Verdict:
    """Can the adversary build a variant of the message the receiver would accept?

    A variant replaces one field with an adversary-chosen value; the receiver
    accepts any term of the message's wire shape, so forging amounts to
    deriving that term.  The shortest forgery over all fields is reported.
    """
    if not spec.has_message(target_message):
        raise AnalyzerError(f"unknown message {target_message!r}")
    msg = spec.message(target_message)
    sc = scenario(spec, assumptions)
    forged = [forged_variant(spec, msg, f) for f in msg.fields]
    initial = set(sc.initial) | {value for value, _ in forged}
    goals = [term for _, term in forged]
    kb = close_knowledge(initial, sc.observed, sc.kdf, depth_budget, goals=goals)
    hits = [extract_trace(kb, g, sc.initial) for g in goals if g in kb]
    if hits:
        return Verdict.attack(min(hits, key=lambda t: len(t.steps)))
    return _negative(kb)


def integrity_initial(spec: ProtocolSpec, target_message: str, assumptions: Iterable[str] = ()) -> set[Term]:
    """Initial knowledge used by :func:`query_integrity` (for trace replay)."""
    msg = spec.message(target_message)
    return set(initial_knowledge(spec, assumptions)) | {forged_variant(spec, msg, f)[0] for f in msg.fields}


def verify_trace(spec: ProtocolSpec, verdict: Verdict, assumptions: Iterable[str] = (), message: str | None = None) -> bool:
    if not verdict.is_attack:
        return False
    initial = integrity_initial(spec, message, assumptions) if message else set(initial_knowledge(spec, assumptions))
    observed = [message_term(spec, m) for m in spec.messages]
    return replay_trace(verdict.trace, initial, observed)


# --- search-space partition ---------------------------------------------------


class Provenance(str, Enum):
    FORMAL = "Formal"
    FUZZ_CONFIRMED = "FuzzConfirmed"
    FUZZ_DOWNGRADED = "FuzzDowngraded"


@dataclass(frozen=True)
class PartitionEntry:
    verdict: Verdict
    provenance: Provenance = Provenance.FORMAL
    # "low" / "high" once fuzz evidence has been folded in
    impact: str | None = None
    # the formal verdict, kept when fuzz evidence replaced it
    prior: Verdict | None = None

    @property
    def fuzz_cleared(self) -> bool:
        return self.verdict.is_safe and self.provenance in (Provenance.FUZZ_CONFIRMED, Provenance.FUZZ_DOWNGRADED)

    def to_json(self) -> dict:
        out = self.verdict.to_json()
        out["provenance"] = self.provenance.value
        if self.impact:
            out["impact"] = self.impact
        if self.prior is not None:
            out["prior"] = self.prior.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PartitionEntry":
        return cls(
            verdict=Verdict.from_json(obj),
            provenance=Provenance(obj.get("provenance", "Formal")),
            impact=obj.get("impact"),
            prior=Verdict.from_json(obj["prior"]) if "prior" in obj else None,
        )


@dataclass(frozen=True)
class SearchSpacePartition:
    entries: dict  # (name, SecurityProperty) -> PartitionEntry
    assumptions: frozenset = frozenset()

    def entry(self, name: str, prop: SecurityProperty = SecurityProperty.CONFIDENTIALITY) -> PartitionEntry:
        return self.entries[(name, prop)]

    def verdict(self, name: str, prop: SecurityProperty = SecurityProperty.CONFIDENTIALITY) -> Verdict:
        return self.entries[(name, prop)].verdict

    def covers(self, name: str) -> bool:
        return any(n == name for n, _ in self.entries)

    def sets(self) -> dict[str, list[tuple[str, str]]]:
        """The three verdict classes as sorted lists of (name, property)."""
        out: dict[str, list] = {k.value: [] for k in VerdictKind}
        for (name, prop), e in sorted(self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            out[e.verdict.kind.value].append((name, prop.value))
        return out

    def replace(self, key: tuple, entry: PartitionEntry) -> "SearchSpacePartition":
        entries = dict(self.entries)
        entries[key] = entry
        return SearchSpacePartition(entries, self.assumptions)

    def to_json(self) -> dict:
        rows = []
        for (name, prop), e in self.entries.items():
            rows.append({"target": name, "property": prop.value, **e.to_json()})
        return {"assumptions": sorted(self.assumptions), "entries": rows}

    @classmethod
    def from_json(cls, obj: dict) -> "SearchSpacePartition":
        entries = {}
        for row in obj["entries"]:
            entries[(row["target"], SecurityProperty(row["property"]))] = PartitionEntry.from_json(row)
        return cls(entries, frozenset(obj.get("assumptions", ())))


def partition_search_space(
    spec: ProtocolSpec,
    assumptions: Iterable[str] = (),
    depth_budget: int = DEFAULT_DEPTH_BUDGET,
) -> SearchSpacePartition:
    """Confidentiality of every transmitted identifier and key, integrity of every message."""
    assumptions = normalise_assumptions(assumptions)
    entries: dict = {}
    for name in spec.transmitted() + [k.name for k in spec.keys]:
        v = query_confidentiality(spec, name, assumptions, depth_budget)
        entries[(name, SecurityProperty.CONFIDENTIALITY)] = PartitionEntry(v)
    for m in spec.messages:
        v = query_integrity(spec, m.name, assumptions, depth_budget)
        entries[(m.name, SecurityProperty.INTEGRITY)] = PartitionEntry(v)
    log.debug("partition: %s", {k: len(v) for k, v in SearchSpacePartition(entries).sets().items()})
    return SearchSpacePartition(entries, assumptions)
