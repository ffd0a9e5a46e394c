import json

import pytest

from nsafuzz.analyzer import partition_search_space
from nsafuzz.proto_model import SecurityProperty
from nsafuzz.sim import (
    Action,
    AdversaryScript,
    ScriptError,
    SessionPhase,
    encode_message,
    run_session,
    seeded_behavior_table,
)
from nsafuzz.sim.behaviors import AUTH_TYPES, ProfileError
from nsafuzz.sim.session import read_records, replay_records, write_records

RRC = "RRCConnectionRequest"
BASE_TICKS = 32


def mitm(*actions):
    return AdversaryScript("MitmRelay", tuple(actions))


def phase_events(t, principal):
    return [SessionPhase(e.detail.split("(")[0]) for e in t.events if e.kind == "phase" and e.principal == principal]


def test_happy_path(baseline):
    t = run_session(baseline)
    assert t.final_phases["UE"] == "AsSecured"
    assert t.final_phases["BS"] == "AsSecured"
    assert t.latency_ticks == BASE_TICKS
    assert t.terminated is None
    assert t.auth_type == AUTH_TYPES["emergency"]


def test_ticks_strictly_increase(baseline):
    t = run_session(baseline, mitm(Action(RRC, "modify", "UE-Identity", 77)))
    ticks = [e.tick for e in t.events]
    assert ticks == sorted(set(ticks))


def test_every_send_has_channel_event(baseline):
    t = run_session(baseline)
    sends = [e.schema for e in t.events if e.kind == "send"]
    recvs = [e.schema for e in t.events if e.kind == "recv"]
    assert sends == recvs


def test_determinism(baseline):
    adv = mitm(Action(RRC, "modify", "EstablishmentCause", 4))
    assert run_session(baseline, adv, seed=5).dumps() == run_session(baseline, adv, seed=5).dumps()


@pytest.mark.parametrize("seed", range(5))
def test_phase_monotonicity(baseline, seed):
    advs = [None, mitm(Action("AuthRequest", "replay", count=3)),
            mitm(Action(RRC, "modify", "UE-Identity", 12345))]
    for adv in advs:
        t = run_session(baseline, adv, seed)
        for p in ("UE", "BS", "CN"):
            ranks = [ph.rank for ph in phase_events(t, p) if not ph.terminal]
            assert ranks == sorted(ranks)


def test_cause_modify_changes_auth_type(baseline):
    t = run_session(baseline, mitm(Action(RRC, "modify", "EstablishmentCause", 4)))
    assert t.final_phases["UE"] == "AsSecured"
    assert t.auth_type == "data"


def test_identity_modify_adds_latency(baseline):
    t = run_session(baseline, mitm(Action(RRC, "modify", "UE-Identity", 0xDEADBEEF)))
    assert t.final_phases["UE"] == "AsSecured"
    assert t.latency_ticks > BASE_TICKS + 2


def test_auth_request_replay_dos(baseline):
    t = run_session(baseline, mitm(Action("AuthRequest", "replay", count=3)))
    assert "Disconnected" in t.final_phases.values()
    t2 = run_session(baseline, mitm(Action("AuthRequest", "replay", count=1)))
    assert "Disconnected" not in t2.final_phases.values()


def test_duplicate_request_identity_confusion(baseline, rrc_cr):
    dup = encode_message(baseline, rrc_cr, {"UE-Identity": 1, "EstablishmentCause": 0, "spare": 0})
    t = run_session(baseline, AdversaryScript("Inject", (Action(RRC, "inject", message=dup),)))
    assert t.identity_confusion


def test_out_of_rule_substitute_is_structural(baseline):
    t = run_session(baseline, mitm(Action(RRC, "substitute", bits="0" * 44)))
    assert t.decode_error is not None
    assert t.terminated == "structural"


def test_clean_profile_rejects_illegal_cause(baseline):
    clean = seeded_behavior_table("clean", baseline)
    t = run_session(baseline, mitm(Action(RRC, "modify", "EstablishmentCause", 15)), behaviors=clean)
    assert t.terminated == "rejected"


@pytest.mark.parametrize("adv", [
    AdversaryScript("Bogus"),
    AdversaryScript("Passive", (Action(RRC, "drop"),)),
    AdversaryScript("MitmRelay", (Action(RRC, "modify", "RAND", 1),)),
    AdversaryScript("MitmRelay", (Action(RRC, "modify", "EstablishmentCause", 16),)),
    AdversaryScript("MitmRelay", (Action(RRC, "replay", count=0),)),
    AdversaryScript("MitmRelay", (Action("NoSuchMessage", "drop"),)),
    AdversaryScript("MitmRelay", (Action(RRC, "explode"),)),
    AdversaryScript(known_terms=frozenset({"undeclared"})),
])
def test_malformed_scripts_rejected(baseline, adv):
    with pytest.raises(ScriptError):
        run_session(baseline, adv)


def test_script_json_roundtrip(baseline, rrc_cr):
    wm = encode_message(baseline, rrc_cr, {"UE-Identity": 9, "EstablishmentCause": 3, "spare": 0})
    adv = AdversaryScript("Inject", (Action(RRC, "inject", message=wm), Action("AuthRequest", "replay", count=2)),
                          frozenset({"IMSI"}), (("C-RNTI", 7),))
    assert AdversaryScript.from_json(json.loads(json.dumps(adv.to_json()))) == adv


def test_safe_identifiers_never_observed(baseline):
    part = partition_search_space(baseline)
    t = run_session(baseline, AdversaryScript("Passive"))
    for name in baseline.transmitted():
        if part.entry(name, SecurityProperty.CONFIDENTIALITY).verdict.is_safe:
            assert name not in t.adversary_observed, name
    assert "UE-Identity" in t.adversary_observed


# --- behavior registry ------------------------------------------------------------


def test_default_profile_counts(baseline):
    reg = seeded_behavior_table("default", baseline)
    imp = reg.implanted()
    assert imp["cause_auth_types"] == 8
    assert imp["command_defects"] == 43
    assert reg.dos_replay_threshold == 3


def test_registry_byte_stable(baseline):
    a = seeded_behavior_table("default", baseline).dumps()
    b = seeded_behavior_table("default", baseline).dumps()
    assert a == b
    ids = [d.id for d in seeded_behavior_table("default", baseline).command_defects]
    assert len(set(ids)) == 43


def test_defects_unique_keys(baseline):
    reg = seeded_behavior_table("default", baseline)
    keys = [d.key for d in reg.command_defects]
    assert len(set(keys)) == len(keys)


def test_clean_profile_empty(baseline):
    assert not any(seeded_behavior_table("clean", baseline).implanted().values())


def test_unknown_profile(baseline):
    with pytest.raises(ProfileError):
        seeded_behavior_table("spicy", baseline)


# --- record / replay ---------------------------------------------------------------


def test_record_replay_identical(baseline, tmp_path):
    reg = seeded_behavior_table("default", baseline)
    advs = [AdversaryScript(), mitm(Action(RRC, "modify", "EstablishmentCause", 2)),
            mitm(Action("AuthRequest", "replay", count=3))]
    runs = [(a, reg, run_session(baseline, a, 0, reg)) for a in advs]
    path = tmp_path / "rec.ndjson"
    write_records(path, runs)
    assert len(read_records(path)) == 3
    assert replay_records(path, baseline) == []


def test_replay_detects_tampering(baseline, tmp_path):
    path = tmp_path / "rec.ndjson"
    write_records(path, [(AdversaryScript(), None, run_session(baseline))])
    lines = path.read_text().splitlines()
    obj = json.loads(lines[-1])
    obj["summary"]["latency_ticks"] += 1
    lines[-1] = json.dumps(obj)
    path.write_text("\n".join(lines) + "\n")
    assert replay_records(path, baseline)
