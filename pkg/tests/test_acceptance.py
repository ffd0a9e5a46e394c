"""The eight acceptance criteria, each timed against its limit."""

import functools
import random
import time

from nsafuzz.analyzer import (
    Provenance,
    close_knowledge,
    message_term,
    query_confidentiality,
    scenario,
    term_of,
    verify_trace,
)
from nsafuzz.campaign import CampaignConfig, efficiency_bench, run_campaign
from nsafuzz.cli import main
from nsafuzz.fuzz_gen import Strategy, count_cases, generate_formal_guided
from nsafuzz.proto_model import SecurityProperty
from nsafuzz.sim.codec import decode_rrc_connection_request, encode_rrc_connection_request

from _acceptance_log import RESULTS
from conftest import random_spec
from oracles import BackwardDeriver

KEYS = ("k_nas_enc", "k_nas_int", "k_rrc_enc", "k_rrc_int", "k_up_enc")
ASSUME = ("attacker_knows(IMSI)", "mitm")


def criterion(n, title, limit_s=None):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            note = ""
            ok = False
            try:
                note = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                if limit_s is not None:
                    assert elapsed < limit_s, f"took {elapsed:.2f}s, limit {limit_s}s"
                ok = True
            finally:
                RESULTS.append((n, title, ok, time.perf_counter() - start, note))
        return run
    return wrap


@criterion(1, "case-count exactness", 1.0)
def test_c1_case_counts(baseline, rrc_cr):
    assert count_cases(Strategy.BRUTE_FORCE, rrc_cr, baseline) == 2**45
    assert count_cases(Strategy.RULE_BASED, rrc_cr, baseline) == 2**40 + 2**4 + 1
    assert count_cases(Strategy.FORMAL_GUIDED, rrc_cr, baseline) == 9


@criterion(2, "credentials-disclosure trace", 1.0)
def test_c2_disclosure_trace(baseline, rrc_cr, tmp_path, capsys):
    assert main(["--out", str(tmp_path), "analyze", "nsa_baseline.spec"]) == 0
    out = capsys.readouterr().out
    for name in ("UE-Identity", "EstablishmentCause"):
        row = next(l for l in out.splitlines() if l.startswith(name + " ") and "Confidentiality" in l)
        assert "AttackTraceFound" in row
        v = query_confidentiality(baseline, name)
        observes = [s for s in v.trace.steps if s.rule == "observe"]
        assert len(observes) == 1
        assert observes[0].conclusion == message_term(baseline, rrc_cr)
        assert verify_trace(baseline, v)


@criterion(3, "key-exposure scenarios", 1.0)
def test_c3_key_exposure(baseline):
    for k in KEYS:
        v = query_confidentiality(baseline, k, ASSUME)
        assert v.is_attack, k
        assert verify_trace(baseline, v, ASSUME)
        assert query_confidentiality(baseline, k).is_safe, k


@criterion(4, "formal-guided bit-level campaign", 10.0)
def test_c4_formal_guided_campaign(baseline):
    rep = run_campaign(baseline, CampaignConfig(Strategy.FORMAL_GUIDED, budget=9))
    assert rep.cases_executed == 9
    assert "AcceptedWithLatency" in rep.classes_for("UE-Identity")
    assert any(c.startswith("AuthTypeChange") for c in rep.classes_for("EstablishmentCause"))
    sweep = run_campaign(baseline, CampaignConfig(Strategy.RULE_BASED, budget=16, fields=("EstablishmentCause",)))
    assert sweep.cases_executed == 16
    auth = {c for c in sweep.classes_for("EstablishmentCause") if c.startswith("AuthTypeChange")}
    assert len(auth) == 8


@criterion(5, "command-level efficiency", 60.0)
def test_c5_command_efficiency(baseline):
    table = efficiency_bench(baseline, [Strategy.UNIFORM_RANDOM, Strategy.PROBABILITY_BASED], trials=20, seed=0)
    assert all(r.cases_to_full_detection is not None for r in table.rows)
    s = table.summary()
    pb, ur = s["ProbabilityBased"]["mean"], s["UniformRandom"]["mean"]
    ratio = table.ratio()
    assert pb < ur
    assert ratio <= 0.60
    return f"ProbabilityBased {pb:.2f} vs UniformRandom {ur:.2f}, ratio {ratio:.3f}; reference 0.365"


@criterion(6, "fortification loop", 1.0)
def test_c6_fortification(baseline, rrc_cr):
    rep = run_campaign(baseline, CampaignConfig(Strategy.FORMAL_GUIDED, budget=9))
    e = rep.partition_after.entry("UE-Identity", SecurityProperty.CONFIDENTIALITY)
    assert e.impact == "low" and e.provenance is Provenance.FUZZ_CONFIRMED
    nxt = generate_formal_guided(baseline, rrc_cr, rep.partition_after)
    assert len(nxt) == 6
    assert {c.target for c in nxt} == {"EstablishmentCause", "spare"}


@criterion(7, "codec and closure property suites", 120.0)
def test_c7_property_suites():
    rng = random.Random(2024)
    for _ in range(10_000):
        b = format(rng.getrandbits(45), "045b")
        assert encode_rrc_connection_request(*decode_rrc_connection_request(b)) == b
        v = (rng.getrandbits(40), rng.getrandbits(4), rng.getrandbits(1))
        assert decode_rrc_connection_request(encode_rrc_connection_request(*v)) == v
    for seed in range(200):
        r = random.Random(seed)
        spec = random_spec(r)
        sc = scenario(spec)
        budget = r.randint(1, 6)
        kb = close_knowledge(set(sc.initial), sc.observed, sc.kdf, budget)
        assert close_knowledge(kb, (), sc.kdf, budget).terms == kb.terms
        assert kb.terms <= close_knowledge(set(sc.initial), sc.observed, sc.kdf, budget + 1).terms
        extra = term_of(spec, r.choice(spec.identifiers).name)
        assert kb.terms <= close_knowledge(set(sc.initial) | {extra}, sc.observed, sc.kdf, budget).terms
    for seed in range(100):
        spec = random_spec(random.Random(50_000 + seed), max_terms=6, max_messages=4)
        sc = scenario(spec)
        for name in spec.transmitted() + [k.name for k in spec.keys]:
            goal = term_of(spec, name)
            oracle = BackwardDeriver(set(sc.initial), sc.observed, sc.kdf, goal)
            v = query_confidentiality(spec, name, depth_budget=6)
            assert v.is_attack == oracle.derivable(goal, 6)
            if v.is_safe:
                assert not oracle.unbounded(goal)


@criterion(8, "determinism of fuzz and bench artifacts")
def test_c8_determinism(tmp_path):
    runs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        assert main(["--seed", "7", "--out", str(d), "fuzz", "nsa_baseline.spec", "--strategy", "probability",
                     "--budget", "400"]) == 0
        assert main(["--seed", "7", "--out", str(d), "bench", "nsa_baseline.spec", "--trials", "5"]) == 0
        runs.append(((d / "report.json").read_bytes(), (d / "bench.csv").read_bytes()))
    assert runs[0] == runs[1]
