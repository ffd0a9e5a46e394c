import dataclasses
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from nsafuzz.analyzer import PartitionEntry, Provenance, Verdict, partition_search_space
from nsafuzz.fuzz_gen import (
    Category,
    CommandMutation,
    CommandPermutation,
    FieldBitsOutOfRule,
    FieldSet,
    FuzzCase,
    Strategy,
    StrategyConfig,
    case_contract_holds,
    count_cases,
    generate,
    generate_brute_force,
    generate_command_level,
    generate_formal_guided,
    generate_rule_based,
    initial_scheduler,
    scheduler_update,
)
from nsafuzz.proto_model import SecurityProperty, parse_spec
from nsafuzz.sim.commands import command_alphabet, enumerate_edits, happy_sequence

from conftest import random_spec

CONF = SecurityProperty.CONFIDENTIALITY


@pytest.fixture(scope="module")
def part(baseline):
    return partition_search_space(baseline)


# --- counts ---------------------------------------------------------------------


def test_rrc_counts_exact(baseline, rrc_cr):
    assert count_cases(Strategy.BRUTE_FORCE, rrc_cr, baseline) == 2**45
    assert count_cases(Strategy.RULE_BASED, rrc_cr, baseline) == 2**40 + 2**4 + 1
    assert count_cases(Strategy.FORMAL_GUIDED, rrc_cr, baseline) == 9


def test_command_level_has_no_schema_count(baseline, rrc_cr):
    with pytest.raises(ValueError):
        count_cases(Strategy.UNIFORM_RANDOM, rrc_cr, baseline)


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_count_growth_rules(seed):
    spec = random_spec(random.Random(seed))
    for msg in spec.messages:
        widths = [spec.identifier(f).bit_width for f in msg.fields]
        assert count_cases(Strategy.FORMAL_GUIDED, msg, spec) == 3 * len(widths)
        assert count_cases(Strategy.BRUTE_FORCE, msg, spec) == 2 ** sum(widths)
        assert count_cases(Strategy.RULE_BASED, msg, spec) == sum(2**w for w in widths)


# --- formal guided ---------------------------------------------------------------


def test_formal_guided_nine_cases(baseline, rrc_cr, part):
    cases = generate_formal_guided(baseline, rrc_cr, part)
    assert len(cases) == 9
    cats = [c.category for c in cases]
    assert cats == [Category.LEGAL, Category.ILLEGAL, Category.OUT_OF_RULE] * 3
    assert [c.target for c in cases] == [f for f in rrc_cr.fields for _ in range(3)]
    assert all(case_contract_holds(baseline, c) for c in cases)


def test_formal_guided_skips_cleared_field(baseline, rrc_cr, part):
    e = part.entry("UE-Identity", CONF)
    cleared = part.replace(("UE-Identity", CONF),
                           PartitionEntry(Verdict.safe(), Provenance.FUZZ_CONFIRMED, "low", e.verdict))
    cases = generate_formal_guided(baseline, rrc_cr, cleared)
    assert len(cases) == 6
    assert {c.target for c in cases} == {"EstablishmentCause", "spare"}


def test_single_flag_schema_three_cases():
    spec = parse_spec("""
[principals]
UE
CN
[identifiers]
flag width=1 legal=enum:0 prot=plain crit=Other
[messages]
RrcSetup UE->CN channel=public fields=flag
""")
    cases = generate_formal_guided(spec, spec.messages[0], partition_search_space(spec))
    assert len(cases) == 3
    assert all(case_contract_holds(spec, c) for c in cases)


def test_empty_illegal_set_substitutes_out_of_rule():
    spec = parse_spec("""
[principals]
UE
CN
[identifiers]
blob width=4 legal=any prot=plain crit=Other
[messages]
RrcSetup UE->CN channel=public fields=blob
""")
    cases = generate_formal_guided(spec, spec.messages[0], partition_search_space(spec))
    assert [c.category for c in cases] == [Category.LEGAL, Category.OUT_OF_RULE, Category.OUT_OF_RULE]
    assert cases[1].note
    assert len(cases[1].mutation.bits) != len(cases[2].mutation.bits)


def test_partition_must_cover_fields(baseline, rrc_cr):
    other = parse_spec("""
[principals]
UE
CN
[identifiers]
x width=4 legal=any prot=plain crit=Other
[messages]
RrcSetup UE->CN channel=public fields=x
""")
    with pytest.raises(ValueError):
        generate_formal_guided(baseline, rrc_cr, partition_search_space(other))


@given(st.integers(0, 10_000), st.integers(0, 50))
@settings(max_examples=80, deadline=None)
def test_category_contracts_random_schemas(spec_seed, case_seed):
    spec = random_spec(random.Random(spec_seed))
    p = partition_search_space(spec)
    for msg in spec.messages:
        fg = generate_formal_guided(spec, msg, p, case_seed)
        assert len(fg) == 3 * len(msg.fields)
        assert all(case_contract_holds(spec, c) for c in fg)
        for c in fg:
            if c.category is Category.OUT_OF_RULE:
                assert isinstance(c.mutation, FieldBitsOutOfRule)
        rb = list(generate_rule_based(spec, msg, 200, case_seed))
        assert all(case_contract_holds(spec, c) for c in rb)
        bf = list(generate_brute_force(spec, msg, 50, case_seed))
        assert all(case_contract_holds(spec, c) for c in bf)


def test_formal_guided_deterministic(baseline, rrc_cr, part):
    a = [c.to_json() for c in generate_formal_guided(baseline, rrc_cr, part, 3)]
    b = [c.to_json() for c in generate_formal_guided(baseline, rrc_cr, part, 3)]
    assert a == b


# --- rule based / brute force ---------------------------------------------------------


def test_rule_based_truncation(baseline, rrc_cr):
    cases = list(generate_rule_based(baseline, rrc_cr, 5))
    assert len(cases) == 5
    assert {c.target for c in cases} == {"UE-Identity"}


def test_cause_sweep_covers_all_values(baseline, rrc_cr):
    schema = dataclasses.replace(rrc_cr, fields=("EstablishmentCause",))
    cases = list(generate_rule_based(baseline, schema, 100))
    assert sorted(c.mutation.value for c in cases) == list(range(16))
    assert Counter(c.category for c in cases) == {Category.LEGAL: 8, Category.ILLEGAL: 8}


def test_rule_based_seed_independent(baseline, rrc_cr):
    schema = dataclasses.replace(rrc_cr, fields=("EstablishmentCause", "spare"))
    a = Counter((c.target, c.mutation.value) for c in generate_rule_based(baseline, schema, 100, seed=1))
    b = Counter((c.target, c.mutation.value) for c in generate_rule_based(baseline, schema, 100, seed=99))
    assert a == b
    assert sum(a.values()) == 16 + 1


def test_brute_force_mixed_radix_prefix(baseline, rrc_cr):
    cases = list(generate_brute_force(baseline, rrc_cr, 4))
    assert [dict(c.mutation.values)["spare"] for c in cases] == [0, 1, 0, 1]
    assert [dict(c.mutation.values)["EstablishmentCause"] for c in cases] == [0, 0, 1, 1]


@pytest.mark.parametrize("bad", [0, -3])
def test_budget_validation(baseline, rrc_cr, bad):
    with pytest.raises(ValueError):
        list(generate_rule_based(baseline, rrc_cr, bad))
    with pytest.raises(ValueError):
        StrategyConfig(Strategy.UNIFORM_RANDOM, bad)


def test_formal_guided_needs_partition():
    with pytest.raises(ValueError):
        StrategyConfig(Strategy.FORMAL_GUIDED, 9)


@pytest.mark.parametrize("text,expected", [
    ("brute", Strategy.BRUTE_FORCE), ("RuleBased", Strategy.RULE_BASED),
    ("formal", Strategy.FORMAL_GUIDED), ("random", Strategy.UNIFORM_RANDOM),
    ("probabilitybased", Strategy.PROBABILITY_BASED),
])
def test_strategy_parse(text, expected):
    assert Strategy.parse(text) is expected


# --- command level ------------------------------------------------------------------


def test_swap_is_valid_permutation(baseline):
    happy = happy_sequence(baseline)
    edits = enumerate_edits(happy, command_alphabet(baseline))
    i, j = happy.index("AuthRequest"), happy.index("NASSecurityModeCommand")
    swap = next(e for e in edits if e.kind == "swap" and e.slot == i and e.other == j)
    seq = swap.apply(happy)
    assert sorted(seq) == sorted(happy) and seq != happy
    assert seq[i] == "NASSecurityModeCommand" and seq[j] == "AuthRequest"


def test_identity_edit_is_baseline(baseline):
    happy = happy_sequence(baseline)
    for e in enumerate_edits(happy, command_alphabet(baseline)):
        assert e.apply(happy) != happy


@pytest.mark.parametrize("strategy", [Strategy.UNIFORM_RANDOM, Strategy.PROBABILITY_BASED])
def test_command_cases_are_members(baseline, strategy):
    happy = happy_sequence(baseline)
    space = {e.apply(happy) for e in enumerate_edits(happy, command_alphabet(baseline))}
    cases = list(generate_command_level(baseline, StrategyConfig(strategy, 300, seed=4)))
    assert cases
    for c in cases:
        assert c.sequence in space
        assert isinstance(c.mutation, (CommandMutation, CommandPermutation))


def test_probability_based_never_repeats(baseline):
    cases = list(generate_command_level(baseline, StrategyConfig(Strategy.PROBABILITY_BASED, 10_000)))
    n = len(enumerate_edits(happy_sequence(baseline), command_alphabet(baseline)))
    assert len(cases) == n
    assert len({c.target for c in cases}) == n


def test_command_stream_deterministic(baseline):
    for s in (Strategy.UNIFORM_RANDOM, Strategy.PROBABILITY_BASED):
        cfg = StrategyConfig(s, 50, seed=11)
        assert [c.to_json() for c in generate(baseline, None, cfg)] == \
               [c.to_json() for c in generate(baseline, None, cfg)]


def _slot3_counts(baseline, reward, n):
    hits = 0
    for seed in range(n):
        stream = generate_command_level(baseline, StrategyConfig(Strategy.PROBABILITY_BASED, 10, seed=seed))
        if reward:
            for arm in [a for a in stream.state.weights if a[0] == 3]:
                stream.feedback(FuzzCase(f"r{arm}", f"r{arm}", FieldSet("x", 0), Category.RANDOM, seed, arm=arm),
                                "Dos", True)
        hits += next(stream).arm[0] == 3
    return hits


def test_reward_raises_slot_frequency(baseline):
    n = 10_000
    before = _slot3_counts(baseline, False, n)
    after = _slot3_counts(baseline, True, n)
    assert after > before
    _, p, _, _ = chi2_contingency([[before, n - before], [after, n - after]])
    assert p < 1e-3


# --- scheduler update rules ---------------------------------------------------------


def _case(arm, target="t"):
    return FuzzCase("c", target, FieldSet("x", 0), Category.RANDOM, 0, arm=arm)


def test_novel_vulnerability_doubles_weight(baseline):
    edits = enumerate_edits(happy_sequence(baseline), command_alphabet(baseline))
    s = initial_scheduler(edits)
    arm = (2, "replace")
    s1 = scheduler_update(s, _case(arm), "Dos", True)
    assert s1.weights[arm] == 2.0
    assert s.weights[arm] == 1.0  # pure: input untouched
    # the same (target, outcome) again is not novel
    s2 = scheduler_update(s1, _case(arm), "Dos", True)
    assert s2.weights[arm] == pytest.approx(2.0 * 0.9)


def test_benign_outcome_decays(baseline):
    edits = enumerate_edits(happy_sequence(baseline), command_alphabet(baseline))
    s = scheduler_update(initial_scheduler(edits), _case((0, "drop")), "Rejected", False)
    assert s.weights[(0, "drop")] == pytest.approx(0.9)


def test_unknown_arm_rejected(baseline):
    edits = enumerate_edits(happy_sequence(baseline), command_alphabet(baseline))
    with pytest.raises(ValueError):
        scheduler_update(initial_scheduler(edits), _case((99, "drop")), "Rejected", False)


def test_benign_history_weights_follow_closed_form(baseline):
    edits = enumerate_edits(happy_sequence(baseline), command_alphabet(baseline))
    s = initial_scheduler(edits)
    arms = sorted(s.weights)
    rng = random.Random(0)
    counts = Counter()
    for _ in range(1000):
        arm = rng.choice(arms)
        counts[arm] += 1
        s = scheduler_update(s, _case(arm), "Rejected", False)
    for arm in arms:
        assert s.weights[arm] == pytest.approx(max(0.9 ** counts[arm], s.epsilon))
    ratio = max(s.weights.values()) / min(s.weights.values())
    spread = max(counts.values()) - min(counts[a] for a in arms)
    assert ratio <= 0.9 ** -spread * (1 + 1e-9)


def test_floor_holds(baseline):
    edits = enumerate_edits(happy_sequence(baseline), command_alphabet(baseline))
    s = initial_scheduler(edits)
    for _ in range(1000):
        s = scheduler_update(s, _case((1, "swap")), "Rejected", False)
    assert s.weights[(1, "swap")] == s.epsilon
    assert max(s.weights.values()) / min(s.weights.values()) == pytest.approx(1 / s.epsilon)
