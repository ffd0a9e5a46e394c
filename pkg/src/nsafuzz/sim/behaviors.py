"""Seeded UE/CN reactions that stand in for implementation defects.

The ``default`` profile implants a known ground truth:

* every legal EstablishmentCause selects its own authentication type, and
  an illegal cause is accepted with an ``unspecified`` type;
* an unknown UE-Identity costs the CN an identity lookup (latency);
* replaying AuthRequest ``dos_replay_threshold`` times disconnects the UE;
* a cloned UE-Identity in a concurrent session confuses CN verification;
* a fixed set of command-sequence defects, drawn once from seed 0.

The ``clean`` profile implants nothing.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from ..proto_model import ProtocolSpec, load_baseline
from .commands import command_alphabet, happy_sequence, reachable_anomalies

PROFILES = ("default", "clean")
DEFAULT_COMMAND_DEFECTS = 43
DEFAULT_DOS_THRESHOLD = 3
DEFAULT_IDENTITY_DELAY = 3
DEFECT_EFFECTS = ("StateDivergence", "Dos", "KeyExposure", "IdentityConfusion")
# registry draws are pinned so defect ids never depend on a campaign seed
REGISTRY_SEED = 0

AUTH_TYPES = {
    "emergency": "emergency",
    "highPriorityAccess": "high-priority",
    "mt-Access": "mt-access",
    "mo-Signalling": "signalling",
    "mo-Data": "data",
    "delayTolerantAccess": "delay-tolerant",
    "mo-VoiceCall": "voice",
    "spare1": "reserved",
}
UNSPECIFIED = "unspecified"
STANDARD = "standard"


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class CommandDefect:
    id: str
    slot: int
    command: str
    follower: str
    effect: str

    @property
    def key(self) -> tuple[int, str, str]:
        return (self.slot, self.command, self.follower)

    @property
    def target(self) -> str:
        return f"cmd@{self.slot}:{self.command}>{self.follower}"


@dataclass(frozen=True)
class BehaviorRegistry:
    profile: str
    cause_auth: bool
    illegal_cause_accepted: bool
    unknown_identity_delay: int
    dos_replay_threshold: int | None
    identity_confusion: bool
    command_defects: tuple[CommandDefect, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_key", {d.key: d for d in self.command_defects})

    def defect_for(self, key) -> CommandDefect | None:
        return self._by_key.get(key)

    def auth_type(self, cause_label: str | None) -> str | None:
        """Authentication type the CN picks; ``None`` means the cause is rejected."""
        if not self.cause_auth:
            return STANDARD if cause_label is not None else None
        if cause_label is None:
            return UNSPECIFIED if self.illegal_cause_accepted else None
        return AUTH_TYPES.get(cause_label, cause_label)

    def implanted(self) -> dict[str, int]:
        """What this profile actually implants, by family."""
        return {
            "cause_auth_types": len(AUTH_TYPES) if self.cause_auth else 0,
            "illegal_cause_acceptance": int(self.illegal_cause_accepted),
            "identity_latency": int(self.unknown_identity_delay > 0),
            "auth_request_dos": int(self.dos_replay_threshold is not None),
            "identity_confusion": int(self.identity_confusion),
            "command_defects": len(self.command_defects),
        }

    def to_json(self) -> dict:
        return {
            "profile": self.profile,
            "cause_auth": self.cause_auth,
            "illegal_cause_accepted": self.illegal_cause_accepted,
            "unknown_identity_delay": self.unknown_identity_delay,
            "dos_replay_threshold": self.dos_replay_threshold,
            "identity_confusion": self.identity_confusion,
            "command_defects": [
                {"id": d.id, "slot": d.slot, "command": d.command, "follower": d.follower, "effect": d.effect}
                for d in self.command_defects
            ],
            "implanted": self.implanted(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _draw_defects(spec: ProtocolSpec, count: int) -> tuple[CommandDefect, ...]:
    """Weighted draw of ``count`` reachable anomalies.

    Handlers are not equally fragile: each slot gets a heavy-tailed
    fragility weight, so defects cluster on a few command positions.
    """
    rng = random.Random(REGISTRY_SEED)
    happy = happy_sequence(spec)
    keys = reachable_anomalies(happy, command_alphabet(spec))
    if count > len(keys):
        raise ProfileError(f"only {len(keys)} reachable command anomalies, {count} defects requested")
    fragility = [rng.paretovariate(1.0) for _ in range(len(happy) + 1)]
    pool = list(keys)
    chosen = []
    for _ in range(count):
        weights = [fragility[k[0]] for k in pool]
        pick = rng.choices(range(len(pool)), weights=weights)[0]
        chosen.append(pool.pop(pick))
    chosen.sort()
    return tuple(
        CommandDefect(f"CD{i + 1:02d}", slot, cmd, follower, rng.choice(DEFECT_EFFECTS))
        for i, (slot, cmd, follower) in enumerate(chosen)
    )


def seeded_behavior_table(config="default", spec: ProtocolSpec | None = None) -> BehaviorRegistry:
    """Build the behavior registry for a profile name or a config mapping.

    A mapping may override ``command_defects``, ``dos_replay_threshold`` and
    ``unknown_identity_delay`` on top of its ``profile``.
    """
    if isinstance(config, str):
        config = {"profile": config}
    config = dict(config)
    profile = config.pop("profile", "default")
    if profile not in PROFILES:
        raise ProfileError(f"unknown behavior profile {profile!r}")
    unknown = set(config) - {"command_defects", "dos_replay_threshold", "unknown_identity_delay"}
    if unknown:
        raise ProfileError(f"unknown profile option {sorted(unknown)[0]!r}")
    spec = spec or load_baseline()
    if profile == "clean":
        return BehaviorRegistry("clean", False, False, 0, None, False, ())
    n = int(config.get("command_defects", DEFAULT_COMMAND_DEFECTS))
    return BehaviorRegistry(
        profile="default",
        cause_auth=True,
        illegal_cause_accepted=True,
        unknown_identity_delay=int(config.get("unknown_identity_delay", DEFAULT_IDENTITY_DELAY)),
        dos_replay_threshold=int(config.get("dos_replay_threshold", DEFAULT_DOS_THRESHOLD)),
        identity_confusion=True,
        command_defects=_draw_defects(spec, n) if n else (),
    )
