"""Fuzz case generation for bit-level and command-level strategies.

Bit-level strategies mutate the fields of one message schema:

* ``BruteForce`` walks the Cartesian product of all field values;
* ``RuleBased`` sweeps one field at a time, others held at happy-path values;
* ``FormalGuided`` emits one Legal, one Illegal and one OutOfRule case per
  field and skips fields that fuzzing already cleared.

Command-level strategies mutate the happy-path command sequence with a
single edit (replace, swap, drop, duplicate).  ``UniformRandom`` samples
edits i.i.d.; ``ProbabilityBased`` samples an arm ``(slot, edit kind)`` in
proportion to a multiplicative weight and then an untried edit within the
arm.  Sessions under a fixed context are deterministic, so an executed edit
carries no further information and gets probability zero.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

from .analyzer import SearchSpacePartition
from .proto_model import Identifier, MessageSchema, ProtocolSpec, SecurityProperty
from .sim.commands import CommandEdit, command_alphabet, enumerate_edits, happy_sequence

DEFAULT_ALPHA = 2.0
DEFAULT_BETA = 0.9
DEFAULT_EPSILON = 1e-6


class Strategy(str, Enum):
    BRUTE_FORCE = "BruteForce"
    RULE_BASED = "RuleBased"
    FORMAL_GUIDED = "FormalGuided"
    UNIFORM_RANDOM = "UniformRandom"
    PROBABILITY_BASED = "ProbabilityBased"

    @property
    def command_level(self) -> bool:
        return self in (Strategy.UNIFORM_RANDOM, Strategy.PROBABILITY_BASED)

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        aliases = {
            "brute": cls.BRUTE_FORCE, "rule": cls.RULE_BASED, "formal": cls.FORMAL_GUIDED,
            "random": cls.UNIFORM_RANDOM, "uniform": cls.UNIFORM_RANDOM, "probability": cls.PROBABILITY_BASED,
        }
        for s in cls:
            if text in (s.value, s.name) or text.lower() == s.value.lower():
                return s
        if text.lower() in aliases:
            return aliases[text.lower()]
        raise ValueError(f"unknown strategy {text!r}")


class Category(str, Enum):
    LEGAL = "Legal"
    ILLEGAL = "Illegal"
    OUT_OF_RULE = "OutOfRule"
    RANDOM = "Random"


# --- mutations ------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSet:
    field: str
    value: int

    def to_json(self) -> dict:
        return {"kind": "FieldSet", "field": self.field, "value": self.value}


@dataclass(frozen=True)
class FieldBitsOutOfRule:
    """A field encoded with the wrong number of bits."""

    field: str
    bits: str
    descriptor: str

    def to_json(self) -> dict:
        return {"kind": "FieldBitsOutOfRule", "field": self.field, "bits": self.bits, "descriptor": self.descriptor}


@dataclass(frozen=True)
class WholeMessage:
    values: tuple[tuple[str, int], ...]

    def to_json(self) -> dict:
        return {"kind": "WholeMessage", "values": [[k, v] for k, v in self.values]}


@dataclass(frozen=True)
class CommandMutation:
    position: int
    command: str

    def to_json(self) -> dict:
        return {"kind": "CommandMutation", "position": self.position, "command": self.command}


@dataclass(frozen=True)
class CommandPermutation:
    sequence: tuple[str, ...]
    edit: str

    def to_json(self) -> dict:
        return {"kind": "CommandPermutation", "sequence": list(self.sequence), "edit": self.edit}


Mutation = FieldSet | FieldBitsOutOfRule | WholeMessage | CommandMutation | CommandPermutation


@dataclass(frozen=True)
class FuzzCase:
    id: str
    target: str
    mutation: Mutation
    category: Category
    seed: int
    # command-level bookkeeping: the resulting sequence and the scheduler arm
    sequence: tuple[str, ...] | None = None
    arm: tuple[int, str] | None = None
    note: str | None = None

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "target": self.target,
            "mutation": self.mutation.to_json(),
            "category": self.category.value,
            "seed": self.seed,
        }
        if self.note:
            out["note"] = self.note
        return out


def write_cases(path, cases) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in cases:
            fh.write(json.dumps(c.to_json(), sort_keys=True) + "\n")


# --- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class StrategyConfig:
    strategy: Strategy
    budget: int
    seed: int = 0
    partition: SearchSpacePartition | None = None
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.strategy is Strategy.FORMAL_GUIDED and self.partition is None:
            raise ValueError("FormalGuided needs a search-space partition")
        if not (self.alpha > 0 and 0 < self.beta and self.epsilon > 0):
            raise ValueError("scheduler parameters must be positive")


# --- counting ---------------------------------------------------------------------


def _sweep_size(ident: Identifier) -> int:
    return ident.sweep if ident.sweep is not None else 1 << ident.bit_width


def count_cases(strategy: Strategy, schema: MessageSchema, spec: ProtocolSpec) -> int:
    """Exact number of cases a bit-level strategy produces for ``schema``."""
    if strategy.command_level:
        raise ValueError(f"{strategy.value} is a command-level strategy; it has no per-schema count")
    if not schema.fields:
        raise ValueError("schema has no fields")
    idents = [spec.identifier(f) for f in schema.fields]
    if strategy is Strategy.BRUTE_FORCE:
        return 1 << sum(i.bit_width for i in idents)
    if strategy is Strategy.RULE_BASED:
        return sum(_sweep_size(i) for i in idents)
    # one case per category per field; an empty category is substituted, never dropped
    return 3 * len(idents)


# --- value helpers ----------------------------------------------------------------


def happy_value(ident: Identifier) -> int:
    if ident.default is not None:
        return ident.default
    if ident.legal.kind == "range":
        return ident.legal.lo
    if ident.legal.kind == "enum":
        return min(v for _, v in ident.legal.labels)
    return 0


def illegal_size(ident: Identifier) -> int:
    return (1 << ident.bit_width) - ident.legal.size(ident.bit_width)


def _nth_illegal(ident: Identifier, n: int) -> int:
    """The n-th value (ascending) that fits the width but is not legal."""
    w, legal = ident.bit_width, ident.legal
    if legal.kind == "range":
        below = legal.lo
        return n if n < below else legal.hi + 1 + (n - below)
    if legal.kind == "enum":
        return [v for v in range(1 << w) if not legal.contains(v, w)][n]
    raise ValueError("no illegal values")


def sample_legal(ident: Identifier, rng: random.Random) -> int:
    """Uniform legal value, avoiding the happy-path value whenever possible."""
    w, legal = ident.bit_width, ident.legal
    default = happy_value(ident)
    if legal.size(w) <= 1:
        return legal.values(w)[0]
    while True:
        if legal.kind == "enum":
            v = rng.choice(legal.values(w))
        elif legal.kind == "range":
            v = rng.randint(legal.lo, legal.hi)
        else:
            v = rng.randrange(1 << w)
        if v != default:
            return v


def sample_illegal(ident: Identifier, rng: random.Random) -> int:
    return _nth_illegal(ident, rng.randrange(illegal_size(ident)))


def out_of_rule_bits(ident: Identifier, rng: random.Random, delta: int) -> tuple[str, str]:
    """A field encoding of the wrong length: ``delta`` bits longer or shorter."""
    n = ident.bit_width + delta
    if n < 1:
        n = ident.bit_width + 2
    bits = format(rng.getrandbits(n), f"0{n}b")
    return bits, f"length{n - ident.bit_width:+d}"


def classify_value(ident: Identifier, value: int) -> Category:
    return Category.LEGAL if ident.legal.contains(value, ident.bit_width) else Category.ILLEGAL


def case_contract_holds(spec: ProtocolSpec, case: FuzzCase) -> bool:
    """Category is consistent with the mutation and the field's legal set."""
    m = case.mutation
    if isinstance(m, FieldSet):
        ident = spec.identifier(m.field)
        if not 0 <= m.value <= ident.max_value:
            return False
        return case.category is classify_value(ident, m.value)
    if isinstance(m, FieldBitsOutOfRule):
        return case.category is Category.OUT_OF_RULE and len(m.bits) != spec.identifier(m.field).bit_width
    if isinstance(m, WholeMessage):
        ok = all(spec.identifier(k).legal.contains(v, spec.identifier(k).bit_width) for k, v in m.values)
        return case.category is (Category.LEGAL if ok else Category.ILLEGAL)
    return case.category is Category.RANDOM


# --- bit-level generators -------------------------------------------------------


def _field_rng(seed: int, field_name: str) -> random.Random:
    return random.Random(f"{seed}:{field_name}")


def generate_formal_guided(
    spec: ProtocolSpec, schema: MessageSchema, partition: SearchSpacePartition, seed: int = 0
) -> list[FuzzCase]:
    """Legal, Illegal and OutOfRule case per field, in schema order.

    A field whose Confidentiality entry has been cleared by earlier fuzzing
    is skipped.  When a field has no illegal values the Illegal slot holds a
    second OutOfRule case of a different length.
    """
    for f in schema.fields:
        if not partition.covers(f):
            raise ValueError(f"partition does not cover field {f!r}")
    cases: list[FuzzCase] = []
    for f in schema.fields:
        if partition.entry(f, SecurityProperty.CONFIDENTIALITY).fuzz_cleared:
            continue
        ident = spec.identifier(f)
        rng = _field_rng(seed, f)
        cases.append(FuzzCase("", f, FieldSet(f, sample_legal(ident, rng)), Category.LEGAL, seed))
        if illegal_size(ident) > 0:
            cases.append(FuzzCase("", f, FieldSet(f, sample_illegal(ident, rng)), Category.ILLEGAL, seed))
        else:
            bits, desc = out_of_rule_bits(ident, rng, -1)
            cases.append(FuzzCase("", f, FieldBitsOutOfRule(f, bits, desc), Category.OUT_OF_RULE, seed,
                                  note="illegal set empty; substituted"))
        bits, desc = out_of_rule_bits(ident, rng, +1)
        cases.append(FuzzCase("", f, FieldBitsOutOfRule(f, bits, desc), Category.OUT_OF_RULE, seed))
    return [replace(c, id=f"FG{seed}-{i:04d}") for i, c in enumerate(cases)]


def _sweep_values(ident: Identifier) -> Iterator[int]:
    if ident.sweep is None:
        yield from range(1 << ident.bit_width)
        return
    default, emitted = happy_value(ident), 0
    for v in range(1 << ident.bit_width):
        if emitted == ident.sweep:
            return
        if v != default:
            emitted += 1
            yield v


def generate_rule_based(spec: ProtocolSpec, schema: MessageSchema, budget: int, seed: int = 0) -> Iterator[FuzzCase]:
    """One-field-at-a-time ascending sweeps; the stream does not depend on ``seed``."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n = 0
    for f in schema.fields:
        ident = spec.identifier(f)
        for v in _sweep_values(ident):
            if n >= budget:
                return
            yield FuzzCase(f"RB-{n:06d}", f, FieldSet(f, v), classify_value(ident, v), seed)
            n += 1


def generate_brute_force(spec: ProtocolSpec, schema: MessageSchema, budget: int, seed: int = 0) -> Iterator[FuzzCase]:
    """Cartesian product in mixed-radix order (last field fastest), truncated at ``budget``."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    idents = [spec.identifier(f) for f in schema.fields]
    total = count_cases(Strategy.BRUTE_FORCE, schema, spec)
    for n in range(min(budget, total)):
        rest, vals = n, []
        for ident in reversed(idents):
            vals.append(rest & ident.max_value)
            rest >>= ident.bit_width
        values = tuple(zip(schema.fields, reversed(vals)))
        legal = all(i.legal.contains(v, i.bit_width) for i, (_, v) in zip(idents, values))
        yield FuzzCase(f"BF-{n:06d}", schema.name, WholeMessage(values),
                       Category.LEGAL if legal else Category.ILLEGAL, seed)


# --- command-level generation -----------------------------------------------------


@dataclass
class SchedulerState:
    weights: dict  # (slot, edit kind) -> weight
    history: list = field(default_factory=list)  # (case id, outcome label)
    seen: set = field(default_factory=set)  # (target, outcome label) already rewarded
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON

    def copy(self) -> "SchedulerState":
        return SchedulerState(dict(self.weights), list(self.history), set(self.seen),
                              self.alpha, self.beta, self.epsilon)

    def probabilities(self) -> dict:
        total = sum(self.weights.values())
        return {a: w / total for a, w in self.weights.items()}


def initial_scheduler(edits: list[CommandEdit], alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA,
                      epsilon=DEFAULT_EPSILON) -> SchedulerState:
    arms = sorted({e.arm for e in edits})
    return SchedulerState({a: 1.0 for a in arms}, alpha=alpha, beta=beta, epsilon=epsilon)


def scheduler_update(state: SchedulerState, case: FuzzCase, outcome: str, vulnerable: bool) -> SchedulerState:
    """Multiplicative update for the arm that produced ``case``.

    A vulnerable outcome never seen before for this case's target multiplies
    the arm weight by alpha; anything else (benign, or a repeat) by beta.
    """
    if case.arm not in state.weights:
        raise ValueError(f"case {case.id} has no scheduler arm")
    new = state.copy()
    key = (case.target, outcome)
    if vulnerable and key not in new.seen:
        new.seen.add(key)
        new.weights[case.arm] *= new.alpha
    else:
        new.weights[case.arm] *= new.beta
    new.weights[case.arm] = max(new.weights[case.arm], new.epsilon)
    new.history.append((case.id, outcome))
    return new


def _command_case(happy, edit: CommandEdit, n: int, seed: int, prefix: str) -> FuzzCase:
    seq = edit.apply(happy)
    if edit.kind == "replace":
        mutation = CommandMutation(edit.slot, edit.command)
    else:
        mutation = CommandPermutation(seq, edit.label())
    return FuzzCase(f"{prefix}{seed}-{n:06d}", edit.label(), mutation, Category.RANDOM, seed,
                    sequence=seq, arm=edit.arm)


class CommandCaseStream:
    """Iterator of command-level cases; ``feedback`` steers ProbabilityBased sampling."""

    def __init__(self, spec: ProtocolSpec, config: StrategyConfig, alphabet: tuple[str, ...] | None = None):
        if not config.strategy.command_level:
            raise ValueError(f"{config.strategy.value} is not a command-level strategy")
        self.happy = happy_sequence(spec)
        self.alphabet = alphabet if alphabet is not None else command_alphabet(spec)
        if not self.alphabet:
            raise ValueError("empty command alphabet")
        self.edits = enumerate_edits(self.happy, self.alphabet)
        self.config = config
        self.rng = random.Random(config.seed)
        self.state = initial_scheduler(self.edits, config.alpha, config.beta, config.epsilon)
        self._by_arm: dict = {}
        for e in self.edits:
            self._by_arm.setdefault(e.arm, []).append(e)
        self._arms = sorted(self._by_arm)
        self._untried = {a: list(es) for a, es in self._by_arm.items()}
        self.n = 0

    def __iter__(self) -> "CommandCaseStream":
        return self

    def __next__(self) -> FuzzCase:
        if self.n >= self.config.budget:
            raise StopIteration
        if self.config.strategy is Strategy.UNIFORM_RANDOM:
            edit = self.rng.choice(self.edits)
            prefix = "UR"
        else:
            live = [a for a in self._arms if self._untried[a]]
            if not live:
                raise StopIteration
            arm = self.rng.choices(live, weights=[self.state.weights[a] for a in live])[0]
            edit = self._untried[arm].pop(self.rng.randrange(len(self._untried[arm])))
            prefix = "PB"
        case = _command_case(self.happy, edit, self.n, self.config.seed, prefix)
        self.n += 1
        return case

    def feedback(self, case: FuzzCase, outcome: str, vulnerable: bool) -> None:
        if self.config.strategy is Strategy.PROBABILITY_BASED:
            self.state = scheduler_update(self.state, case, outcome, vulnerable)


def generate_command_level(spec: ProtocolSpec, config: StrategyConfig, alphabet=None) -> CommandCaseStream:
    return CommandCaseStream(spec, config, alphabet)


def generate(spec: ProtocolSpec, schema: MessageSchema | None, config: StrategyConfig):
    """Case stream for any strategy (bit-level strategies need ``schema``)."""
    s = config.strategy
    if s.command_level:
        return generate_command_level(spec, config)
    if schema is None:
        raise ValueError(f"{s.value} needs a message schema")
    if s is Strategy.FORMAL_GUIDED:
        return iter(generate_formal_guided(spec, schema, config.partition, config.seed)[: config.budget])
    if s is Strategy.RULE_BASED:
        return generate_rule_based(spec, schema, config.budget, config.seed)
    return generate_brute_force(spec, schema, config.budget, config.seed)
