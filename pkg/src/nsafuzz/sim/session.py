"""Tick-driven UE / BS / CN session with an adversary on the channel.

A session walks the happy-path message sequence of the protocol model.  Every
message is encoded to bits by its sender, passes through the adversary
channel, and is decoded and checked by its receiver.  Each recorded event
advances the tick counter by one.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable

from ..analyzer import close_knowledge, initial_knowledge, kdf_terms, message_term, term_of
from ..proto_model import MessageSchema, Phase, ProtocolSpec
from ..terms import Atom
from .behaviors import BehaviorRegistry, seeded_behavior_table
from .codec import DecodeError, WireMessage, bits_to_hex, decode_message, encode_message, hex_to_bits
from .commands import first_anomaly, happy_sequence

log = logging.getLogger(__name__)

PRINCIPALS = ("UE", "BS", "CN")
CAUSE_FIELD = "EstablishmentCause"
IDENTITY_FIELD = "UE-Identity"
AUTH_REQUEST = "AuthRequest"
# identifiers a command-level adversary must know to inject into the session
CONTEXT_FIELDS = ("C-RNTI", "RAND")


class ScriptError(ValueError):
    """Malformed adversary script."""


class SessionPhase(str, Enum):
    Idle = "Idle"
    RrcRequested = "RrcRequested"
    RrcSetup = "RrcSetup"
    RrcComplete = "RrcComplete"
    AuthChallenged = "AuthChallenged"
    Authenticated = "Authenticated"
    NasSecured = "NasSecured"
    AsSecured = "AsSecured"
    Failed = "Failed"
    Disconnected = "Disconnected"

    @property
    def terminal(self) -> bool:
        return self in (SessionPhase.Failed, SessionPhase.Disconnected)

    @property
    def rank(self) -> int:
        return list(SessionPhase).index(self)


# --- adversary ------------------------------------------------------------------

MODES = ("None", "Passive", "MitmRelay", "Inject")
ACTIONS = ("drop", "forward", "modify", "replay", "inject", "substitute", "resequence")


@dataclass(frozen=True)
class Action:
    """One adversary action.

    ``trigger`` is a message name or an integer tick.  ``substitute``
    replaces the message bits wholesale (out-of-rule input) and
    ``resequence`` replaces the command plan of the whole session.
    """

    trigger: str | int
    kind: str
    field: str | None = None
    value: int | None = None
    count: int = 1
    message: WireMessage | None = None
    bits: str | None = None
    sequence: tuple[str, ...] | None = None

    def to_json(self) -> dict:
        out: dict = {"trigger": self.trigger, "kind": self.kind}
        if self.field is not None:
            out["field"] = self.field
            out["value"] = self.value
        if self.kind == "replay":
            out["count"] = self.count
        if self.message is not None:
            out["message"] = self.message.to_json()
        if self.bits is not None:
            out["bits"] = bits_to_hex(self.bits)
        if self.sequence is not None:
            out["sequence"] = list(self.sequence)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Action":
        msg = obj.get("message")
        return cls(
            trigger=obj["trigger"],
            kind=obj["kind"],
            field=obj.get("field"),
            value=obj.get("value"),
            count=obj.get("count", 1),
            message=WireMessage(msg["schema"], hex_to_bits(msg["bits"])) if msg else None,
            bits=hex_to_bits(obj["bits"]) if "bits" in obj else None,
            sequence=tuple(obj["sequence"]) if "sequence" in obj else None,
        )


@dataclass(frozen=True)
class AdversaryScript:
    mode: str = "None"
    actions: tuple[Action, ...] = ()
    known_terms: frozenset[str] = frozenset()
    # identifier values the adversary has learned (RNTI, RAND, ...)
    context: tuple[tuple[str, int], ...] = ()

    def validate(self, spec: ProtocolSpec) -> None:
        if self.mode not in MODES:
            raise ScriptError(f"unknown adversary mode {self.mode!r}")
        if self.mode in ("None", "Passive") and self.actions:
            raise ScriptError(f"mode {self.mode} cannot carry actions")
        for name in self.known_terms:
            if not (spec.has_identifier(name) or spec.has_key(name)):
                raise ScriptError(f"known term {name!r} is not declared")
        for name, _ in self.context:
            if not spec.has_identifier(name):
                raise ScriptError(f"context names undeclared identifier {name!r}")
        for a in self.actions:
            if a.kind not in ACTIONS:
                raise ScriptError(f"unknown action {a.kind!r}")
            if isinstance(a.trigger, str) and a.trigger != "*" and not spec.has_message(a.trigger):
                if a.kind != "resequence":
                    raise ScriptError(f"trigger {a.trigger!r} is not a declared message")
            if isinstance(a.trigger, int) and a.trigger < 0:
                raise ScriptError("tick triggers must be non-negative")
            if a.kind == "modify":
                if not isinstance(a.trigger, str) or not spec.has_message(a.trigger):
                    raise ScriptError("modify needs a message trigger")
                msg = spec.message(a.trigger)
                if a.field not in msg.fields:
                    raise ScriptError(f"modify targets {a.field!r}, not a field of {msg.name}")
                width = spec.identifier(a.field).bit_width
                if not isinstance(a.value, int) or not 0 <= a.value < (1 << width):
                    raise ScriptError(f"modify value {a.value!r} does not fit {width} bits")
            elif a.kind == "replay" and a.count < 1:
                raise ScriptError("replay count must be >= 1")
            elif a.kind == "inject" and (a.message is None or not spec.has_message(a.message.schema)):
                raise ScriptError("inject needs a wire message of a declared schema")
            elif a.kind == "substitute" and (a.bits is None or any(c not in "01" for c in a.bits)):
                raise ScriptError("substitute needs a bit string")
            elif a.kind == "resequence":
                if not a.sequence or any(not spec.has_message(c) and c != "IdentityRequest" for c in a.sequence):
                    raise ScriptError("resequence needs a non-empty sequence of known commands")

    def context_map(self) -> dict[str, int]:
        return dict(self.context)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "actions": [a.to_json() for a in self.actions],
            "known_terms": sorted(self.known_terms),
            "context": [[k, v] for k, v in self.context],
        }

    @classmethod
    def from_json(cls, obj: dict | None) -> "AdversaryScript":
        if obj is None:
            return cls()
        return cls(
            mode=obj.get("mode", "None"),
            actions=tuple(Action.from_json(a) for a in obj.get("actions", ())),
            known_terms=frozenset(obj.get("known_terms", ())),
            context=tuple((k, v) for k, v in obj.get("context", ())),
        )


# --- transcript -------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    tick: int
    principal: str
    kind: str  # send | recv | phase | note
    schema: str | None = None
    bits: str | None = None
    detail: str | None = None

    def to_json(self) -> dict:
        out: dict = {"tick": self.tick, "principal": self.principal, "event": self.kind}
        if self.schema is not None:
            out["schema"] = self.schema
        if self.bits is not None:
            out["bits"] = bits_to_hex(self.bits)
        if self.detail is not None:
            out["detail"] = self.detail
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Event":
        return cls(
            obj["tick"], obj["principal"], obj["event"], obj.get("schema"),
            hex_to_bits(obj["bits"]) if "bits" in obj else None, obj.get("detail"),
        )


@dataclass
class Transcript:
    spec_fingerprint: str
    seed: int
    events: list[Event] = field(default_factory=list)
    final_phases: dict[str, str] = field(default_factory=dict)
    latency_ticks: int = 0
    session_keys: dict[str, str] = field(default_factory=dict)
    auth_type: str | None = None
    auth_cause: str | None = None
    decode_error: str | None = None
    terminated: str | None = None  # rejected | structural | timeout
    identity_confusion: bool = False
    defect_id: str | None = None
    adversary_observed: list[str] = field(default_factory=list)
    adversary_keys: list[str] = field(default_factory=list)
    values: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "spec_fingerprint": self.spec_fingerprint,
            "seed": self.seed,
            "final_phases": dict(sorted(self.final_phases.items())),
            "latency_ticks": self.latency_ticks,
            "session_keys": dict(sorted(self.session_keys.items())),
            "auth_type": self.auth_type,
            "auth_cause": self.auth_cause,
            "decode_error": self.decode_error,
            "terminated": self.terminated,
            "identity_confusion": self.identity_confusion,
            "defect_id": self.defect_id,
            "adversary_observed": sorted(self.adversary_observed),
            "adversary_keys": sorted(self.adversary_keys),
            "values": dict(sorted(self.values.items())),
        }

    def to_json(self) -> dict:
        return {"events": [e.to_json() for e in self.events], **self.summary()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# --- analyzer bridge ------------------------------------------------------------


@lru_cache(maxsize=256)
def _adversary_view(spec: ProtocolSpec, observed: tuple[str, ...], known: frozenset[str]) -> tuple[tuple, tuple]:
    """(plaintext identifier names, key names) in the closure over observed traffic."""
    assumptions = [f"attacker_knows({n})" for n in sorted(known)]
    initial = initial_knowledge(spec, assumptions)
    terms = [message_term(spec, spec.message(m)) for m in observed]
    kb = close_knowledge(set(initial), terms, kdf_terms(spec))
    idents = tuple(sorted(i for i in spec.transmitted() if Atom(i) in kb))
    keys = tuple(sorted(k.name for k in spec.keys if term_of(spec, k.name) in kb))
    return idents, keys


# --- session ------------------------------------------------------------------------


def _phase_plan(spec: ProtocolSpec) -> dict[str, SessionPhase]:
    """Session phase both endpoints enter once a message is accepted."""
    out: dict[str, SessionPhase] = {}
    for phase in spec.phases():
        msgs = [m.name for m in spec.messages if m.phase == phase]
        for j, name in enumerate(msgs):
            last = j == len(msgs) - 1
            if phase == Phase.RRC_SETUP:
                out[name] = SessionPhase.RrcRequested if j == 0 else (
                    SessionPhase.RrcComplete if last else SessionPhase.RrcSetup)
            elif phase == Phase.MUTUAL_AUTH:
                out[name] = SessionPhase.Authenticated if last and j else SessionPhase.AuthChallenged
            elif phase == Phase.NAS_SECURITY:
                out[name] = SessionPhase.NasSecured if last else None
            else:
                out[name] = SessionPhase.AsSecured if last else None
    return {k: v for k, v in out.items() if v is not None}


def _keys_for_phase(spec: ProtocolSpec, phase: SessionPhase) -> list[str]:
    """Keys the endpoints derive on reaching ``phase``.

    Root keys come out of authentication; derived keys held by the CN
    belong to NAS security, the rest to AS security.
    """
    out = []
    for rule in spec.kdf_rules:
        derived = any(spec.has_key(i) for i in rule.inputs)
        cn_held = "CN" in spec.key(rule.output_key).holders
        if not derived:
            target = SessionPhase.Authenticated
        else:
            target = SessionPhase.NasSecured if cn_held else SessionPhase.AsSecured
        if target == phase:
            out.append(rule.output_key)
    return out


class _Run:
    def __init__(self, spec: ProtocolSpec, adversary: AdversaryScript, seed: int, behaviors: BehaviorRegistry):
        self.spec = spec
        self.adv = adversary
        self.beh = behaviors
        self.rng = random.Random(seed)
        self.tick = 0
        self.t = Transcript(spec.fingerprint(), seed)
        self.phase = {p: SessionPhase.Idle for p in spec.principals}
        self.plan = _phase_plan(spec)
        self.values = self._happy_values()
        self.t.values = dict(self.values)
        self.observed: list[str] = []
        self.cause_label: str | None = None
        self.identity: int | None = None
        self.extra_keys: set[str] = set()
        self.halted = False

    def _happy_values(self) -> dict[str, int]:
        vals = {}
        for ident in self.spec.identifiers:
            if ident.default is not None:
                vals[ident.name] = ident.default
            else:
                vals[ident.name] = self.rng.choice(ident.legal.values(ident.bit_width)) \
                    if ident.legal.kind == "enum" else self._draw(ident)
        return vals

    def _draw(self, ident) -> int:
        lo, hi = (ident.legal.lo, ident.legal.hi) if ident.legal.kind == "range" else (0, ident.max_value)
        return self.rng.randint(lo, hi)

    # events

    def emit(self, principal: str, kind: str, schema=None, bits=None, detail=None) -> None:
        self.tick += 1
        self.t.events.append(Event(self.tick, principal, kind, schema, bits, detail))

    def enter(self, principal: str, phase: SessionPhase, detail: str | None = None) -> None:
        if principal not in self.phase:
            return
        cur = self.phase[principal]
        if cur.terminal or (phase.rank <= cur.rank and not phase.terminal):
            return
        self.phase[principal] = phase
        self.emit(principal, "phase", detail=phase.value if detail is None else f"{phase.value}({detail})")

    def fail(self, principal: str, reason: str, terminated: str) -> None:
        self.enter(principal, SessionPhase.Failed, reason)
        self.t.terminated = self.t.terminated or terminated
        self.halted = True

    def note(self, principal: str, detail: str) -> None:
        self.emit(principal, "note", detail=detail)

    # actions

    def actions_for(self, msg_name: str, tick: int) -> list[Action]:
        out = []
        for a in self.adv.actions:
            if a.kind == "resequence":
                continue
            if a.trigger == "*" or a.trigger == msg_name or (isinstance(a.trigger, int) and a.trigger == tick):
                out.append(a)
        return out

    def run(self) -> Transcript:
        happy = happy_sequence(self.spec)
        reseq = [a for a in self.adv.actions if a.kind == "resequence"]
        sequence = tuple(reseq[-1].sequence) if reseq else happy
        anomaly = first_anomaly(happy, sequence)
        for idx, name in enumerate(sequence):
            if self.halted:
                break
            if anomaly is not None and idx == anomaly[0]:
                self.command_anomaly(anomaly)
                break
            self.deliver(self.spec.message(name))
        else:
            if anomaly is not None and not self.halted:
                # plan ended early: the receiver waits for a message that never comes
                self.timeout("UE", "missing-command")
        self.finish()
        return self.t

    def timeout(self, principal: str, detail: str) -> None:
        self.note(principal, f"timeout:{detail}")
        self.fail(principal, "timeout", "timeout")

    def deliver(self, msg: MessageSchema) -> None:
        values = dict(self.values)
        wire = encode_message(self.spec, msg, values)
        self.emit(msg.sender, "send", msg.name, wire.bits)
        acts = self.actions_for(msg.name, self.tick)
        bits = wire.bits
        replays = 0
        for a in acts:
            if a.kind == "drop":
                self.note("ADV", f"drop:{msg.name}")
                self.timeout(msg.receiver, f"{msg.name}-lost")
                return
            if a.kind == "modify":
                values[a.field] = a.value
                bits = encode_message(self.spec, msg, values).bits
                self.note("ADV", f"modify:{a.field}")
            elif a.kind == "substitute":
                bits = a.bits
                self.note("ADV", f"substitute:{msg.name}")
            elif a.kind == "replay":
                replays += a.count
            elif a.kind == "inject":
                self.inject(a.message)
        if msg.channel_key is None:
            self.observed.append(msg.name)
        if not self.receive(msg, bits):
            return
        for i in range(replays):
            self.note("ADV", f"replay:{msg.name}")
            self.emit(msg.receiver, "recv", msg.name, bits, detail="replayed")
            if (msg.name == AUTH_REQUEST and self.beh.dos_replay_threshold is not None
                    and i + 1 >= self.beh.dos_replay_threshold):
                self.enter(msg.receiver, SessionPhase.Disconnected, "auth-request-flood")
                self.halted = True
                return

    def inject(self, wire: WireMessage) -> None:
        msg = self.spec.message(wire.schema)
        self.note("ADV", f"inject:{msg.name}")
        self.emit(msg.receiver, "recv", msg.name, wire.bits, detail="injected")
        try:
            dec = decode_message(self.spec, msg, wire.bits)
        except DecodeError:
            self.note(msg.receiver, "discard:injected-malformed")
            return
        if (self.beh.identity_confusion and IDENTITY_FIELD in dec.fields
                and dec.fields[IDENTITY_FIELD] == self.values.get(IDENTITY_FIELD)):
            # two live sessions claim one identity; CN binds the challenge to the wrong one
            self.t.identity_confusion = True
            self.note("CN", "identity-confusion")

    def receive(self, msg: MessageSchema, bits: str) -> bool:
        self.emit(msg.receiver, "recv", msg.name, bits)
        try:
            dec = decode_message(self.spec, msg, bits)
        except DecodeError as e:
            self.t.decode_error = str(e)
            self.fail(msg.receiver, "decode-error", "structural")
            return False
        for name, v in dec.fields.items():
            ident = self.spec.identifier(name)
            legal = ident.legal.contains(v, ident.bit_width)
            if name == CAUSE_FIELD:
                label = ident.legal.label_of(v) if legal else None
                auth = self.beh.auth_type(label)
                if auth is None:
                    self.fail(msg.receiver, f"illegal-{name}", "rejected")
                    return False
                self.cause_label = label or "unspecified"
                self.t.auth_type = auth
                self.t.auth_cause = self.cause_label
            elif name == IDENTITY_FIELD:
                # identities are opaque to the network; unknown ones cost a lookup
                self.identity = v
            elif not legal:
                self.fail(msg.receiver, f"illegal-{name}", "rejected")
                return False
        if self.t.identity_confusion and msg.name == AUTH_REQUEST:
            self.fail("UE", "auth-mismatch", "rejected")
            return False
        if msg.name == AUTH_REQUEST and self.identity is not None:
            known = self.spec.identifier(IDENTITY_FIELD).default
            if known is not None and self.identity != known:
                for _ in range(self.beh.unknown_identity_delay):
                    self.note("CN", "identity-lookup")
        phase = self.plan.get(msg.name)
        if phase is not None:
            for p in (msg.sender, msg.receiver):
                self.enter(p, phase)
            for k in _keys_for_phase(self.spec, phase):
                self.t.session_keys.setdefault(k, f"key:{k}")
        return True

    def command_anomaly(self, anomaly) -> None:
        slot, cmd, follower = anomaly
        ctx = self.adv.context_map()
        self.note("ADV", f"command:{slot}:{cmd}")
        if any(ctx.get(f) != self.values.get(f) for f in CONTEXT_FIELDS if self.spec.has_identifier(f)):
            self.note("UE", f"discard:{cmd}:stale-context")
            self.timeout("UE", "stalled")
            return
        defect = self.beh.defect_for(anomaly)
        if defect is None:
            self.note("UE", f"reject:{cmd}")
            self.fail("UE", "unexpected-command", "rejected")
            return
        self.t.defect_id = defect.id
        self.note("UE", f"defect:{defect.id}")
        if defect.effect == "Dos":
            self.enter("UE", SessionPhase.Disconnected, defect.id)
        elif defect.effect == "KeyExposure":
            key = next(iter(sorted(self.t.session_keys)), None) or self.spec.keys[0].name
            self.extra_keys.add(key)
        elif defect.effect == "IdentityConfusion":
            self.t.identity_confusion = True
        # StateDivergence: the UE silently moves on while the network stays behind
        elif "UE" in self.phase and not self.phase["UE"].terminal:
            self.phase["UE"] = SessionPhase.AsSecured
            self.emit("UE", "phase", detail=f"{SessionPhase.AsSecured.value}(diverged)")
        self.halted = True

    def finish(self) -> None:
        self.t.final_phases = {p: ph.value for p, ph in self.phase.items()}
        # adversary bookkeeping is not time the network spends
        self.t.latency_ticks = sum(1 for e in self.t.events if e.principal != "ADV")
        idents, keys = _adversary_view(self.spec, tuple(self.observed), frozenset(self.adv.known_terms))
        self.t.adversary_observed = list(idents)
        self.t.adversary_keys = sorted(set(keys) | self.extra_keys)


def run_session(
    spec: ProtocolSpec,
    adversary: AdversaryScript | None = None,
    seed: int = 0,
    behaviors: BehaviorRegistry | None = None,
) -> Transcript:
    """Execute one session; deterministic in (spec, adversary, seed, behaviors)."""
    adversary = adversary or AdversaryScript()
    adversary.validate(spec)
    behaviors = behaviors if behaviors is not None else _default_registry(spec)
    return _Run(spec, adversary, seed, behaviors).run()


@lru_cache(maxsize=8)
def _default_registry(spec: ProtocolSpec) -> BehaviorRegistry:
    return seeded_behavior_table("default", spec)


def session_context(transcript: Transcript, spec: ProtocolSpec) -> tuple[tuple[str, int], ...]:
    """Identifier values an eavesdropper learns from a transcript (fixed-context attacks)."""
    return tuple((f, transcript.values[f]) for f in CONTEXT_FIELDS if f in transcript.values)


# --- record / replay ------------------------------------------------------------


def write_records(path, runs: Iterable[tuple[AdversaryScript, BehaviorRegistry | None, Transcript]]) -> None:
    """NDJSON: a header per session, its events, then a summary line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for adv, beh, t in runs:
            header = {"session": {"seed": t.seed, "spec_fingerprint": t.spec_fingerprint,
                                  "adversary": adv.to_json(),
                                  "profile": None if beh is None else beh.to_json()}}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for e in t.events:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
            fh.write(json.dumps({"summary": t.summary()}, sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    sessions: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "session" in obj:
                sessions.append({**obj["session"], "events": []})
            elif "summary" in obj:
                sessions[-1]["summary"] = obj["summary"]
            else:
                sessions[-1]["events"].append(obj)
    return sessions


def replay_records(path, spec: ProtocolSpec) -> list[str]:
    """Re-execute recorded sessions; returns human-readable differences (empty when identical)."""
    diffs = []
    for i, rec in enumerate(read_records(path)):
        if rec["spec_fingerprint"] != spec.fingerprint():
            diffs.append(f"session {i}: spec fingerprint {rec['spec_fingerprint']} != {spec.fingerprint()}")
            continue
        prof = rec.get("profile")
        beh = None
        if prof is not None:
            beh = seeded_behavior_table(
                {"profile": prof["profile"], "command_defects": len(prof["command_defects"])}
                if prof["profile"] != "clean" else "clean", spec)
        t = run_session(spec, AdversaryScript.from_json(rec["adversary"]), rec["seed"], beh)
        new_events = [e.to_json() for e in t.events]
        for j, (old, new) in enumerate(zip(rec["events"], new_events)):
            if old != new:
                diffs.append(f"session {i} event {j}: recorded {old} replayed {new}")
                break
        if len(rec["events"]) != len(new_events):
            diffs.append(f"session {i}: {len(rec['events'])} recorded events, {len(new_events)} replayed")
        if rec.get("summary") != t.summary():
            diffs.append(f"session {i}: summary differs")
    return diffs
