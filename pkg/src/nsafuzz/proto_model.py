"""Declarative protocol model: identifiers, keys, message flow, KDF rules.

The model is read from a small sectioned text format (``*.spec``) and
validated on construction.  From a valid model we derive the dependency
table (which terms guard each identifier for each security property) and
the corresponding dependency graph.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable

import networkx as nx


class SpecError(ValueError):
    """Raised for malformed or inconsistent spec files."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None, subject: str | None = None):
        self.line = line
        self.column = column
        self.subject = subject
        self.detail = message
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class Phase(str, Enum):
    RRC_SETUP = "RrcSetup"
    MUTUAL_AUTH = "MutualAuth"
    NAS_SECURITY = "NasSecurity"
    AS_SECURITY = "AsSecurity"

    @property
    def order(self) -> int:
        return list(Phase).index(self)


class Criticality(str, Enum):
    USER_IDENTITY = "UserIdentity"
    CONFIG_IDENTIFIER = "ConfigIdentifier"
    KEY_MATERIAL = "KeyMaterial"
    NONCE = "Nonce"
    OTHER = "Other"


class SecurityProperty(str, Enum):
    CONFIDENTIALITY = "Confidentiality"
    INTEGRITY = "Integrity"
    AUTHENTICATION = "Authentication"
    ACCOUNTING = "Accounting"


@dataclass(frozen=True)
class LegalValues:
    """Set of legal values for a field: an enumeration, a range, or anything."""

    kind: str  # "enum" | "range" | "any"
    labels: tuple[tuple[str, int], ...] = ()
    lo: int = 0
    hi: int = 0

    def contains(self, value: int, width: int) -> bool:
        if not 0 <= value < (1 << width):
            return False
        if self.kind == "any":
            return True
        if self.kind == "range":
            return self.lo <= value <= self.hi
        return any(v == value for _, v in self.labels)

    def values(self, width: int) -> list[int]:
        """Legal values in ascending order (materialised; avoid on wide fields)."""
        if self.kind == "enum":
            return sorted({v for _, v in self.labels})
        if self.kind == "range":
            return list(range(self.lo, self.hi + 1))
        return list(range(1 << width))

    def size(self, width: int) -> int:
        if self.kind == "enum":
            return len({v for _, v in self.labels})
        if self.kind == "range":
            return max(0, min(self.hi, (1 << width) - 1) - self.lo + 1)
        return 1 << width

    def label_of(self, value: int) -> str | None:
        for name, v in self.labels:
            if v == value:
                return name
        return None

    def value_of(self, label: str) -> int:
        for name, v in self.labels:
            if name == label:
                return v
        raise KeyError(label)

    def text(self) -> str:
        if self.kind == "any":
            return "any"
        if self.kind == "range":
            return f"range:{self.lo}..{self.hi}"
        parts = [v_name if v_name == str(v) else f"{v_name}={v}" for v_name, v in self.labels]
        return "enum:" + ",".join(parts)


@dataclass(frozen=True)
class Protection:
    enc_key: str | None = None
    int_key: str | None = None

    @property
    def kind(self) -> str:
        if self.enc_key and self.int_key:
            return "EncryptedAndIntegrity"
        if self.enc_key:
            return "Encrypted"
        if self.int_key:
            return "IntegrityProtected"
        return "Plaintext"

    def keys(self) -> tuple[str, ...]:
        return tuple(k for k in (self.enc_key, self.int_key) if k)

    def text(self) -> str:
        if self.enc_key and self.int_key:
            return f"enc+int:{self.enc_key},{self.int_key}"
        if self.enc_key:
            return f"enc:{self.enc_key}"
        if self.int_key:
            return f"int:{self.int_key}"
        return "plain"


PLAINTEXT = Protection()


@dataclass(frozen=True)
class Identifier:
    name: str
    bit_width: int
    legal: LegalValues = LegalValues("any")
    protection: Protection = PLAINTEXT
    criticality: Criticality = Criticality.OTHER
    # happy-path value used by the simulator and generators
    default: int | None = None
    # rule-based sweep cap (per-spec override of the 2**width sweep)
    sweep: int | None = None

    @property
    def max_value(self) -> int:
        return (1 << self.bit_width) - 1


@dataclass(frozen=True)
class Key:
    name: str
    holders: tuple[str, ...] = ()


@dataclass(frozen=True)
class MessageSchema:
    name: str
    sender: str
    receiver: str
    fields: tuple[str, ...]
    phase: Phase
    channel_key: str | None = None  # None means a public channel

    @property
    def channel(self) -> str:
        return f"secured:{self.channel_key}" if self.channel_key else "public"


@dataclass(frozen=True)
class KdfRule:
    output_key: str
    inputs: tuple[str, ...]
    # "kdf" is understood by the analyzer; "xor" and "dh" are declared but unsupported
    op: str = "kdf"


SUPPORTED_KDF_OPS = ("kdf",)
KNOWN_KDF_OPS = ("kdf", "xor", "dh")


@dataclass(frozen=True)
class ProtocolSpec:
    principals: tuple[str, ...]
    identifiers: tuple[Identifier, ...]
    keys: tuple[Key, ...]
    messages: tuple[MessageSchema, ...]
    kdf_rules: tuple[KdfRule, ...] = ()
    assumptions: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        validate(self)

    # lookups

    def identifier(self, name: str) -> Identifier:
        for ident in self.identifiers:
            if ident.name == name:
                return ident
        raise KeyError(name)

    def has_identifier(self, name: str) -> bool:
        return any(i.name == name for i in self.identifiers)

    def key(self, name: str) -> Key:
        for k in self.keys:
            if k.name == name:
                return k
        raise KeyError(name)

    def has_key(self, name: str) -> bool:
        return any(k.name == name for k in self.keys)

    def message(self, name: str) -> MessageSchema:
        for m in self.messages:
            if m.name == name:
                return m
        raise KeyError(name)

    def has_message(self, name: str) -> bool:
        return any(m.name == name for m in self.messages)

    def kdf_rule(self, key_name: str) -> KdfRule | None:
        for rule in self.kdf_rules:
            if rule.output_key == key_name:
                return rule
        return None

    def transmitted(self) -> list[str]:
        """Identifier names that appear in at least one message, in declaration order."""
        used = {f for m in self.messages for f in m.fields}
        return [i.name for i in self.identifiers if i.name in used]

    def phases(self) -> list[Phase]:
        seen: list[Phase] = []
        for m in self.messages:
            if m.phase not in seen:
                seen.append(m.phase)
        return seen

    def fingerprint(self) -> str:
        return hashlib.sha256(serialize_spec(self).encode()).hexdigest()[:16]


def validate(spec: ProtocolSpec) -> None:
    def dup_check(names: Iterable[str], what: str) -> None:
        seen: set[str] = set()
        for n in names:
            if n in seen:
                raise SpecError(f"duplicate {what} name {n!r}", subject=f"dup:{n}")
            seen.add(n)

    dup_check(spec.principals, "principal")
    dup_check([i.name for i in spec.identifiers] + [k.name for k in spec.keys], "term")
    dup_check([m.name for m in spec.messages], "message")

    keys = {k.name for k in spec.keys}
    principals = set(spec.principals)
    idents = {i.name for i in spec.identifiers}

    for k in spec.keys:
        for h in k.holders:
            if h not in principals:
                raise SpecError(f"key {k.name!r} held by undeclared principal {h!r}", subject=k.name)

    for ident in spec.identifiers:
        if ident.bit_width < 1:
            raise SpecError(f"invalid bit_width {ident.bit_width} for {ident.name!r}", subject=ident.name)
        legal = ident.legal
        if legal.kind == "enum":
            if not legal.labels:
                raise SpecError(f"empty enumeration for {ident.name!r}", subject=ident.name)
            for label, v in legal.labels:
                if not 0 <= v <= ident.max_value:
                    raise SpecError(
                        f"legal value {label}={v} of {ident.name!r} does not fit in {ident.bit_width} bits",
                        subject=ident.name,
                    )
        elif legal.kind == "range":
            if legal.lo > legal.hi or legal.lo < 0 or legal.hi > ident.max_value:
                raise SpecError(f"range {legal.lo}..{legal.hi} of {ident.name!r} does not fit its width", subject=ident.name)
        for k in ident.protection.keys():
            if k not in keys:
                raise SpecError(f"undeclared key {k!r} in protection of {ident.name!r}", subject=ident.name)
        if ident.default is not None and not 0 <= ident.default <= ident.max_value:
            raise SpecError(f"default of {ident.name!r} does not fit in {ident.bit_width} bits", subject=ident.name)
        if ident.sweep is not None and ident.sweep < 1:
            raise SpecError(f"sweep of {ident.name!r} must be >= 1", subject=ident.name)

    last_phase = -1
    for m in spec.messages:
        if m.sender not in principals:
            raise SpecError(f"message {m.name!r}: undeclared principal {m.sender!r}", subject=m.name)
        if m.receiver not in principals:
            raise SpecError(f"message {m.name!r}: undeclared principal {m.receiver!r}", subject=m.name)
        if m.sender == m.receiver:
            raise SpecError(f"message {m.name!r}: sender equals receiver", subject=m.name)
        if m.channel_key is not None and m.channel_key not in keys:
            raise SpecError(f"undeclared key {m.channel_key!r} on channel of {m.name!r}", subject=m.name)
        if not m.fields:
            raise SpecError(f"message {m.name!r} has no fields", subject=m.name)
        for f in m.fields:
            if f not in idents:
                raise SpecError(f"message {m.name!r}: undeclared identifier {f!r}", subject=m.name)
        if m.phase.order < last_phase:
            raise SpecError(f"message {m.name!r}: phase {m.phase.value} out of flow order", subject=m.name)
        last_phase = m.phase.order

    outputs: set[str] = set()
    for rule in spec.kdf_rules:
        if rule.output_key not in keys:
            raise SpecError(f"kdf output {rule.output_key!r} is not a declared key", subject="kdf:" + rule.output_key)
        if rule.output_key in outputs:
            raise SpecError(f"duplicate kdf rule for {rule.output_key!r}", subject="kdf:" + rule.output_key)
        outputs.add(rule.output_key)
        if rule.output_key in rule.inputs:
            raise SpecError(f"kdf rule for {rule.output_key!r} derives from itself", subject="kdf:" + rule.output_key)
        if rule.op not in KNOWN_KDF_OPS:
            raise SpecError(f"unknown derivation operator {rule.op!r}", subject="kdf:" + rule.output_key)
        for inp in rule.inputs:
            if inp not in keys and inp not in idents:
                raise SpecError(f"kdf rule for {rule.output_key!r}: undeclared term {inp!r}", subject="kdf:" + rule.output_key)
    # derivation chains must not loop
    g = nx.DiGraph()
    g.add_edges_from((r.output_key, i) for r in spec.kdf_rules for i in r.inputs)
    if not nx.is_directed_acyclic_graph(g):
        raise SpecError("kdf rules form a derivation cycle")


# --- parsing ----------------------------------------------------------------

SECTIONS = ("principals", "keys", "identifiers", "kdf", "messages", "assumptions")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")
_SECTION = re.compile(r"^\[([a-z]+)\]$")
_KDF = re.compile(r"^(?P<out>\S+)\s*=\s*(?P<op>[a-z]+)\((?P<args>[^)]*)\)$")
_MSG_ARROW = re.compile(r"^(?P<s>[^\s-]+)->(?P<r>\S+)$")


def _col(raw: str, token: str) -> int:
    return raw.find(token) + 1


def _check_name(name: str, lineno: int, raw: str) -> str:
    if not _NAME.match(name):
        raise SpecError(f"invalid name {name!r}", lineno, _col(raw, name))
    return name


def _parse_int(text: str, lineno: int, raw: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise SpecError(f"expected integer, got {text!r}", lineno, _col(raw, text)) from None


def _attrs(tokens: list[str], lineno: int, raw: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise SpecError(f"expected key=value, got {tok!r}", lineno, _col(raw, tok))
        k, v = tok.split("=", 1)
        if k in out:
            raise SpecError(f"repeated attribute {k!r}", lineno, _col(raw, tok))
        out[k] = v
    return out


def _parse_legal(text: str, lineno: int, raw: str) -> LegalValues:
    if text == "any":
        return LegalValues("any")
    if text.startswith("range:"):
        lo, sep, hi = text[6:].partition("..")
        if not sep:
            raise SpecError(f"bad range {text!r}", lineno, _col(raw, text))
        return LegalValues("range", lo=_parse_int(lo, lineno, raw), hi=_parse_int(hi, lineno, raw))
    if text.startswith("enum:"):
        labels = []
        items = [x for x in text[5:].split(",") if x]
        for idx, item in enumerate(items):
            if "=" in item:
                label, v = item.split("=", 1)
                labels.append((label, _parse_int(v, lineno, raw)))
            elif re.fullmatch(r"\d+|0x[0-9a-fA-F]+", item):
                labels.append((item, int(item, 0)))
            else:
                labels.append((item, idx))
        return LegalValues("enum", labels=tuple(labels))
    raise SpecError(f"bad legal value descriptor {text!r}", lineno, _col(raw, text))


def _parse_prot(text: str, lineno: int, raw: str) -> Protection:
    if text == "plain":
        return PLAINTEXT
    kind, sep, rest = text.partition(":")
    if not sep or not rest:
        raise SpecError(f"bad protection {text!r}", lineno, _col(raw, text))
    if kind == "enc":
        return Protection(enc_key=rest)
    if kind == "int":
        return Protection(int_key=rest)
    if kind == "enc+int":
        parts = rest.split(",")
        if len(parts) != 2:
            raise SpecError(f"enc+int needs two keys: {text!r}", lineno, _col(raw, text))
        return Protection(enc_key=parts[0], int_key=parts[1])
    raise SpecError(f"bad protection {text!r}", lineno, _col(raw, text))


def parse_spec(text: str) -> ProtocolSpec:
    """Parse spec-file text into a validated :class:`ProtocolSpec`."""
    section: str | None = None
    principals: list[str] = []
    keys: list[Key] = []
    idents: list[Identifier] = []
    kdfs: list[KdfRule] = []
    messages: list[MessageSchema] = []
    assumptions: list[str] = []
    phase_names = {p.value: p for p in Phase}
    decl_lines: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            if m.group(1) not in SECTIONS:
                raise SpecError(f"unknown section [{m.group(1)}]", lineno, 1)
            section = m.group(1)
            continue
        if section is None:
            raise SpecError("declaration outside of any section", lineno, 1)
        tokens = line.split()

        if section == "principals":
            for tok in tokens:
                principals.append(_check_name(tok, lineno, raw))
                _note(decl_lines, tok, lineno)

        elif section == "keys":
            name = _check_name(tokens[0], lineno, raw)
            attrs = _attrs(tokens[1:], lineno, raw)
            unknown = set(attrs) - {"holders"}
            if unknown:
                raise SpecError(f"unknown key attribute {sorted(unknown)[0]!r}", lineno)
            holders = tuple(h for h in attrs.get("holders", "").split(",") if h)
            _note(decl_lines, name, lineno)
            keys.append(Key(name, holders))

        elif section == "identifiers":
            name = _check_name(tokens[0], lineno, raw)
            attrs = _attrs(tokens[1:], lineno, raw)
            unknown = set(attrs) - {"width", "legal", "prot", "crit", "default", "sweep"}
            if unknown:
                raise SpecError(f"unknown identifier attribute {sorted(unknown)[0]!r}", lineno)
            if "width" not in attrs:
                raise SpecError(f"identifier {name!r} lacks width=", lineno)
            width = _parse_int(attrs["width"], lineno, raw)
            if width < 1:
                raise SpecError(f"invalid bit_width {width} for {name!r}", lineno, _col(raw, "width="))
            try:
                crit = Criticality(attrs.get("crit", "Other"))
            except ValueError:
                raise SpecError(f"unknown criticality {attrs['crit']!r}", lineno, _col(raw, "crit=")) from None
            _note(decl_lines, name, lineno)
            idents.append(
                Identifier(
                    name=name,
                    bit_width=width,
                    legal=_parse_legal(attrs.get("legal", "any"), lineno, raw),
                    protection=_parse_prot(attrs.get("prot", "plain"), lineno, raw),
                    criticality=crit,
                    default=_parse_int(attrs["default"], lineno, raw) if "default" in attrs else None,
                    sweep=_parse_int(attrs["sweep"], lineno, raw) if "sweep" in attrs else None,
                )
            )

        elif section == "kdf":
            km = _KDF.match(line)
            if not km:
                raise SpecError(f"bad kdf rule {line!r}", lineno, 1)
            args = tuple(a.strip() for a in km.group("args").split(",") if a.strip())
            if not args:
                raise SpecError("kdf rule without inputs", lineno, _col(raw, "("))
            _note(decl_lines, "kdf:" + km.group("out"), lineno)
            kdfs.append(KdfRule(km.group("out"), args, km.group("op")))

        elif section == "messages":
            # optional leading message name; otherwise auto-named
            if tokens[0] in phase_names:
                name = f"msg{len(messages) + 1}"
                rest = tokens
            else:
                name = _check_name(tokens[0].rstrip(":"), lineno, raw)
                rest = tokens[1:]
            if len(rest) < 2 or rest[0] not in phase_names:
                raise SpecError(f"expected phase name in message line {line!r}", lineno, 1)
            arrow = _MSG_ARROW.match(rest[1])
            if not arrow:
                raise SpecError(f"expected sender->receiver, got {rest[1]!r}", lineno, _col(raw, rest[1]))
            attrs = _attrs(rest[2:], lineno, raw)
            unknown = set(attrs) - {"channel", "fields"}
            if unknown:
                raise SpecError(f"unknown message attribute {sorted(unknown)[0]!r}", lineno)
            chan = attrs.get("channel", "public")
            if chan == "public":
                chan_key = None
            elif chan.startswith("secured:") and chan[8:]:
                chan_key = chan[8:]
            else:
                raise SpecError(f"bad channel {chan!r}", lineno, _col(raw, "channel="))
            fields = tuple(f for f in attrs.get("fields", "").split(",") if f)
            _note(decl_lines, name, lineno)
            messages.append(
                MessageSchema(
                    name=name,
                    sender=arrow.group("s"),
                    receiver=arrow.group("r"),
                    fields=fields,
                    phase=phase_names[rest[0]],
                    channel_key=chan_key,
                )
            )

        elif section == "assumptions":
            assumptions.extend(tokens)

    try:
        return ProtocolSpec(
            principals=tuple(principals),
            identifiers=tuple(idents),
            keys=tuple(keys),
            messages=tuple(messages),
            kdf_rules=tuple(kdfs),
            assumptions=frozenset(assumptions),
        )
    except SpecError as exc:
        if exc.line is None and exc.subject in decl_lines:
            raise SpecError(exc.detail, decl_lines[exc.subject], 1, exc.subject) from None
        raise


def _note(decl_lines: dict[str, int], name: str, lineno: int) -> None:
    # first declaration owns the name; a repeat is reported at its own line
    if name in decl_lines:
        decl_lines.setdefault(f"dup:{name}", lineno)
    decl_lines.setdefault(name, lineno)


def serialize_spec(spec: ProtocolSpec) -> str:
    out = ["[principals]", *spec.principals, "", "[keys]"]
    for k in spec.keys:
        out.append(f"{k.name} holders={','.join(k.holders)}" if k.holders else k.name)
    out += ["", "[identifiers]"]
    for i in spec.identifiers:
        line = (
            f"{i.name} width={i.bit_width} legal={i.legal.text()} "
            f"prot={i.protection.text()} crit={i.criticality.value}"
        )
        if i.default is not None:
            line += f" default={i.default}"
        if i.sweep is not None:
            line += f" sweep={i.sweep}"
        out.append(line)
    out += ["", "[kdf]"]
    out += [f"{r.output_key} = {r.op}({', '.join(r.inputs)})" for r in spec.kdf_rules]
    out += ["", "[messages]"]
    for m in spec.messages:
        out.append(
            f"{m.name} {m.phase.value} {m.sender}->{m.receiver} channel={m.channel} fields={','.join(m.fields)}"
        )
    out += ["", "[assumptions]", *sorted(spec.assumptions), ""]
    return "\n".join(out)


def load_spec(path) -> ProtocolSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def baseline_text() -> str:
    return resources.files("nsafuzz").joinpath("specs/nsa_baseline.spec").read_text(encoding="utf-8")


def load_baseline() -> ProtocolSpec:
    return parse_spec(baseline_text())


# --- dependency table / graph ----------------------------------------------


@dataclass(frozen=True)
class DependencyTable:
    rows: dict[tuple[str, SecurityProperty], frozenset[str]]
    # identifiers that never appear in a message (rows hold the {self} sentinel)
    non_exposed: frozenset[str] = frozenset()
    # key-derivation relation: output key -> inputs
    derivations: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def guards(self, name: str, prop: SecurityProperty) -> frozenset[str]:
        return self.rows[(name, prop)]

    def identifiers(self) -> list[str]:
        seen: list[str] = []
        for name, _ in self.rows:
            if name not in seen:
                seen.append(name)
        return seen

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"identifier": n, "property": p.value, "guards": sorted(g)}
                for (n, p), g in self.rows.items()
            ],
            "non_exposed": sorted(self.non_exposed),
            "derivations": {k: list(v) for k, v in sorted(self.derivations.items())},
        }


def _traversal_guards(spec: ProtocolSpec, msg: MessageSchema, ident: Identifier) -> dict[SecurityProperty, set[str]]:
    prot = ident.protection
    enc = {k for k in (msg.channel_key, prot.enc_key) if k}
    integ = {prot.int_key} if prot.int_key else set()
    sender_bound = {k for k in integ if msg.sender in spec.key(k).holders}
    attributing = {
        f for f in msg.fields if f != ident.name and spec.identifier(f).criticality is Criticality.USER_IDENTITY
    }
    return {
        SecurityProperty.CONFIDENTIALITY: enc,
        SecurityProperty.INTEGRITY: integ,
        SecurityProperty.AUTHENTICATION: sender_bound,
        SecurityProperty.ACCOUNTING: sender_bound | attributing,
    }


def derive_dependency_table(spec: ProtocolSpec) -> DependencyTable:
    """Guard sets per (identifier, property).

    A guard set is the union of the per-traversal guards over every message
    carrying the identifier, collapsing to the empty set as soon as one
    traversal is unguarded.  Identifiers that are never sent get ``{self}``.
    """
    rows: dict[tuple[str, SecurityProperty], frozenset[str]] = {}
    non_exposed = set()
    for ident in spec.identifiers:
        traversals = [m for m in spec.messages if ident.name in m.fields]
        if not traversals:
            non_exposed.add(ident.name)
            for prop in SecurityProperty:
                rows[(ident.name, prop)] = frozenset({ident.name})
            continue
        per = [_traversal_guards(spec, m, ident) for m in traversals]
        for prop in SecurityProperty:
            sets = [p[prop] for p in per]
            rows[(ident.name, prop)] = frozenset() if any(not s for s in sets) else frozenset().union(*sets)
    derivations = {r.output_key: r.inputs for r in spec.kdf_rules}
    return DependencyTable(rows=rows, non_exposed=frozenset(non_exposed), derivations=derivations)


DERIVATION = "Derivation"


def dependency_graph(table: DependencyTable) -> nx.MultiDiGraph:
    """Edge ``a -> b`` keyed by property iff ``b`` guards ``a`` for that property.

    Key-derivation edges (output -> input) are added under the ``Derivation`` key.
    """
    g = nx.MultiDiGraph()
    for (name, prop), guards in table.rows.items():
        g.add_node(name)
        for guard in sorted(guards):
            g.add_edge(name, guard, key=prop.value, property=prop.value)
    for out, inputs in table.derivations.items():
        for inp in inputs:
            g.add_edge(out, inp, key=DERIVATION, property=DERIVATION)
    return g


def derivation_subgraph(g: nx.MultiDiGraph) -> nx.DiGraph:
    sub = nx.DiGraph()
    sub.add_edges_from((a, b) for a, b, k in g.edges(keys=True) if k == DERIVATION)
    return sub


def graph_to_dict(g: nx.MultiDiGraph) -> dict:
    return {
        "nodes": sorted(g.nodes),
        "edges": sorted([a, b, k] for a, b, k in g.edges(keys=True)),
    }
