import random

import pytest

from nsafuzz.proto_model import (
    Criticality,
    Identifier,
    KdfRule,
    Key,
    LegalValues,
    MessageSchema,
    Phase,
    Protection,
    ProtocolSpec,
    load_baseline,
)


@pytest.fixture(scope="session")
def baseline():
    return load_baseline()


@pytest.fixture(scope="session")
def rrc_cr(baseline):
    return baseline.message("RRCConnectionRequest")


def random_spec(rng: random.Random, max_terms: int = 6, max_messages: int = 4) -> ProtocolSpec:
    """Small random spec: up to ``max_terms`` identifiers plus keys, a few KDF rules."""
    n_terms = rng.randint(2, max_terms)
    n_keys = rng.randint(1, max(1, n_terms // 2))
    n_idents = max(1, n_terms - n_keys)
    keys = [Key(f"k{i}", ("A", "B")) for i in range(n_keys)]
    key_names = [k.name for k in keys]
    idents = []
    for i in range(n_idents):
        roll = rng.random()
        enc = rng.choice(key_names) if roll < 0.4 else None
        integ = rng.choice(key_names) if rng.random() < 0.3 else None
        idents.append(Identifier(f"x{i}", rng.randint(1, 8), LegalValues("any"),
                                 Protection(enc, integ), Criticality.OTHER))
    ident_names = [i.name for i in idents]
    kdf = []
    # derive some keys from lower-numbered keys or identifiers: acyclic by construction
    for j, k in enumerate(key_names):
        if rng.random() < 0.5:
            pool = ident_names + key_names[:j]
            inputs = tuple(sorted(set(rng.sample(pool, rng.randint(1, min(2, len(pool)))))))
            kdf.append(KdfRule(k, inputs))
    messages = []
    for m in range(rng.randint(1, max_messages)):
        fields = tuple(rng.sample(ident_names, rng.randint(1, min(2, len(ident_names)))))
        channel = rng.choice(key_names) if rng.random() < 0.3 else None
        sender, receiver = ("A", "B") if m % 2 == 0 else ("B", "A")
        messages.append(MessageSchema(f"m{m}", sender, receiver, fields, Phase.RRC_SETUP, channel))
    return ProtocolSpec(("A", "B"), tuple(idents), tuple(keys), tuple(messages), tuple(kdf))


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, secs, note in sorted(RESULTS):
        status = "PASS" if ok else "FAIL"
        extra = f" ({note})" if note else ""
        terminalreporter.write_line(f"[{status}] criterion {n}: {title} [{secs:.2f}s]{extra}")
