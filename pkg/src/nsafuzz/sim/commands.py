"""Command-level mutation space over the happy-path message sequence."""

from __future__ import annotations

from dataclasses import dataclass

from ..proto_model import ProtocolSpec

# commands outside the happy path that an adversary can still emit
EXTRA_COMMANDS = ("IdentityRequest",)
END = "<end>"
EDIT_KINDS = ("replace", "swap", "drop", "duplicate")


def happy_sequence(spec: ProtocolSpec) -> tuple[str, ...]:
    return tuple(m.name for m in spec.messages)


def command_alphabet(spec: ProtocolSpec) -> tuple[str, ...]:
    return happy_sequence(spec) + tuple(c for c in EXTRA_COMMANDS if not spec.has_message(c))


@dataclass(frozen=True)
class CommandEdit:
    kind: str
    slot: int
    command: str | None = None  # replacement command
    other: int | None = None  # swap partner

    def apply(self, happy: tuple[str, ...]) -> tuple[str, ...]:
        seq = list(happy)
        if self.kind == "replace":
            seq[self.slot] = self.command
        elif self.kind == "swap":
            seq[self.slot], seq[self.other] = seq[self.other], seq[self.slot]
        elif self.kind == "drop":
            del seq[self.slot]
        elif self.kind == "duplicate":
            seq.insert(self.slot + 1, seq[self.slot])
        else:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        return tuple(seq)

    @property
    def arm(self) -> tuple[int, str]:
        return (self.slot, self.kind)

    def label(self) -> str:
        if self.kind == "replace":
            return f"replace@{self.slot}:{self.command}"
        if self.kind == "swap":
            return f"swap@{self.slot}:{self.other}"
        return f"{self.kind}@{self.slot}"


def enumerate_edits(happy: tuple[str, ...], alphabet: tuple[str, ...]) -> list[CommandEdit]:
    """Every single-edit mutation of ``happy``, in a fixed order."""
    n = len(happy)
    out: list[CommandEdit] = []
    for p in range(n):
        out += [CommandEdit("replace", p, command=c) for c in alphabet if c != happy[p]]
        out += [CommandEdit("swap", p, other=q) for q in range(p + 1, n) if happy[q] != happy[p]]
        out.append(CommandEdit("drop", p))
        out.append(CommandEdit("duplicate", p))
    return out


def first_anomaly(happy: tuple[str, ...], seq: tuple[str, ...]) -> tuple[int, str, str] | None:
    """(slot, unexpected command, the command after it) at the first deviation."""
    for i, cmd in enumerate(seq):
        if i >= len(happy) or cmd != happy[i]:
            follower = seq[i + 1] if i + 1 < len(seq) else END
            return (i, cmd, follower)
    if len(seq) < len(happy):
        return (len(seq), END, END)
    return None


def reachable_anomalies(happy: tuple[str, ...], alphabet: tuple[str, ...]) -> list[tuple[int, str, str]]:
    keys = {first_anomaly(happy, e.apply(happy)) for e in enumerate_edits(happy, alphabet)}
    keys.discard(None)
    return sorted(k for k in keys if k[1] != END)
