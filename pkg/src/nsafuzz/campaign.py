"""Run fuzz cases against the simulator, classify outcomes, fortify the partition."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .analyzer import (
    FUZZ_CONTRADICTION,
    PartitionEntry,
    Provenance,
    SearchSpacePartition,
    Verdict,
    partition_search_space,
)
from .fuzz_gen import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_EPSILON,
    CommandCaseStream,
    FieldBitsOutOfRule,
    FieldSet,
    FuzzCase,
    Strategy,
    StrategyConfig,
    WholeMessage,
    count_cases,
    generate,
    write_cases,
)
from .proto_model import ProtocolSpec, SecurityProperty
from .sim.behaviors import BehaviorRegistry, seeded_behavior_table
from .sim.codec import splice_field
from .sim.session import Action, AdversaryScript, Transcript, run_session, session_context

log = logging.getLogger(__name__)

DEFAULT_MESSAGE = "RRCConnectionRequest"
DEFAULT_K = 16
LATENCY_MARGIN = 2
BENIGN = ("Accepted", "AcceptedWithLatency")


class OutcomeKind(str, Enum):
    STRUCTURAL_REJECT = "StructuralReject"
    DOS = "Dos"
    IDENTITY_CONFUSION = "IdentityConfusion"
    AUTH_TYPE_CHANGE = "AuthTypeChange"
    KEY_EXPOSURE = "KeyExposure"
    ACCEPTED_WITH_LATENCY = "AcceptedWithLatency"
    STATE_DIVERGENCE = "StateDivergence"
    REJECTED = "Rejected"
    ACCEPTED = "Accepted"


HIGH = frozenset({
    OutcomeKind.AUTH_TYPE_CHANGE, OutcomeKind.DOS, OutcomeKind.KEY_EXPOSURE,
    OutcomeKind.IDENTITY_CONFUSION, OutcomeKind.STATE_DIVERGENCE,
})


@dataclass(frozen=True)
class OutcomeClass:
    kind: OutcomeKind
    detail: str | None = None

    def label(self) -> str:
        return f"{self.kind.value}({self.detail})" if self.detail else self.kind.value

    @property
    def severity(self) -> str | None:
        if self.kind in HIGH:
            return "High"
        if self.kind is OutcomeKind.ACCEPTED_WITH_LATENCY:
            return "Low"
        return None


def classify_outcome(t: Transcript, baseline: Transcript) -> OutcomeClass:
    if t.spec_fingerprint != baseline.spec_fingerprint:
        raise ValueError("transcripts come from different specs")
    if t.decode_error is not None:
        return OutcomeClass(OutcomeKind.STRUCTURAL_REJECT)
    if "Disconnected" in t.final_phases.values():
        return OutcomeClass(OutcomeKind.DOS)
    if t.identity_confusion:
        return OutcomeClass(OutcomeKind.IDENTITY_CONFUSION)
    if t.auth_type is not None and t.auth_type != baseline.auth_type:
        return OutcomeClass(OutcomeKind.AUTH_TYPE_CHANGE, f"{baseline.auth_cause}->{t.auth_cause}")
    exposed = sorted(set(t.adversary_keys) - set(baseline.adversary_keys))
    if exposed:
        return OutcomeClass(OutcomeKind.KEY_EXPOSURE, ",".join(exposed))
    if t.terminated is None and t.latency_ticks > baseline.latency_ticks + LATENCY_MARGIN:
        return OutcomeClass(OutcomeKind.ACCEPTED_WITH_LATENCY)
    if t.terminated is None and t.final_phases != baseline.final_phases:
        return OutcomeClass(OutcomeKind.STATE_DIVERGENCE)
    if t.terminated is not None:
        return OutcomeClass(OutcomeKind.REJECTED)
    return OutcomeClass(OutcomeKind.ACCEPTED)


@dataclass(frozen=True)
class VulnRecord:
    case_id: str
    outcome: OutcomeClass
    target: str
    severity: str
    novel: bool

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "target": self.target, "class": self.outcome.label(),
                "severity": self.severity, "novel": self.novel}


# --- configuration --------------------------------------------------------------------


@dataclass(frozen=True)
class CampaignConfig:
    strategy: Strategy
    budget: int = 1000
    seed: int = 0
    profile: str = "default"
    message: str = DEFAULT_MESSAGE
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    k_downgrade: int = DEFAULT_K
    assumptions: tuple[str, ...] = ()
    # restrict bit-level fuzzing to these fields of the message (empty: all)
    fields: tuple[str, ...] = ()
    # stop as soon as every seeded defect the strategy can reach is found
    stop_at_full_detection: bool = False

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.k_downgrade < 1:
            raise ValueError("k must be >= 1")

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value, "budget": self.budget, "seed": self.seed,
            "profile": self.profile, "message": self.message, "alpha": self.alpha,
            "beta": self.beta, "epsilon": self.epsilon, "k": self.k_downgrade,
            "assumptions": list(self.assumptions), "fields": list(self.fields),
        }


_CONFIG_KEYS = {
    "campaign": {"strategy", "budget", "seed", "profile", "message", "fields", "stop_at_full_detection"},
    "scheduler": {"alpha", "beta", "epsilon"},
    "fortify": {"k"},
    "analysis": {"assume"},
}


def parse_campaign_config(text: str, overrides: dict | None = None) -> CampaignConfig:
    """Sectioned ``key = value`` text; see the README for the recognised keys."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ValueError(f"config: {e}") from None
    for section in cp.sections():
        if section not in _CONFIG_KEYS:
            raise ValueError(f"config: unknown section [{section}]")
        extra = set(cp[section]) - _CONFIG_KEYS[section]
        if extra:
            raise ValueError(f"config: unknown key {sorted(extra)[0]!r} in [{section}]")
    get = lambda s, k, d=None: cp.get(s, k, fallback=d)  # noqa: E731
    values = {
        "strategy": get("campaign", "strategy"),
        "budget": get("campaign", "budget", "1000"),
        "seed": get("campaign", "seed", "0"),
        "profile": get("campaign", "profile", "default"),
        "message": get("campaign", "message", DEFAULT_MESSAGE),
        "fields": get("campaign", "fields", ""),
        "stop": get("campaign", "stop_at_full_detection", "false"),
        "alpha": get("scheduler", "alpha", str(DEFAULT_ALPHA)),
        "beta": get("scheduler", "beta", str(DEFAULT_BETA)),
        "epsilon": get("scheduler", "epsilon", str(DEFAULT_EPSILON)),
        "k": get("fortify", "k", str(DEFAULT_K)),
        "assume": get("analysis", "assume", ""),
    }
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = str(v)
    if not values["strategy"]:
        raise ValueError("config: [campaign] strategy is required")
    try:
        return CampaignConfig(
            strategy=Strategy.parse(values["strategy"]),
            budget=int(values["budget"]),
            seed=int(values["seed"]),
            profile=values["profile"],
            message=values["message"],
            alpha=float(values["alpha"]),
            beta=float(values["beta"]),
            epsilon=float(values["epsilon"]),
            k_downgrade=int(values["k"]),
            assumptions=tuple(a.strip() for a in values["assume"].split(",") if a.strip()),
            fields=tuple(f.strip() for f in values["fields"].split(",") if f.strip()),
            stop_at_full_detection=values["stop"].strip().lower() in ("1", "true", "yes"),
        )
    except ValueError as e:
        raise ValueError(f"config: {e}") from None


# --- case execution -----------------------------------------------------------------


def case_adversary(spec: ProtocolSpec, case: FuzzCase, message: str, baseline: Transcript,
                   template: AdversaryScript) -> AdversaryScript:
    m = case.mutation
    if case.sequence is not None:
        return AdversaryScript("MitmRelay", (Action("*", "resequence", sequence=case.sequence),),
                               template.known_terms, session_context(baseline, spec))
    msg = spec.message(message)
    if isinstance(m, FieldSet):
        acts = (Action(message, "modify", field=m.field, value=m.value),)
    elif isinstance(m, WholeMessage):
        acts = tuple(Action(message, "modify", field=k, value=v) for k, v in m.values)
    elif isinstance(m, FieldBitsOutOfRule):
        acts = (Action(message, "substitute", bits=splice_field(spec, msg, baseline.values, m.field, m.bits)),)
    else:
        raise ValueError(f"unsupported mutation {m!r}")
    return AdversaryScript("MitmRelay", template.actions + acts, template.known_terms, template.context)


def execute_case(spec, case, message, baseline, template, behaviors, seed) -> tuple[Transcript, OutcomeClass]:
    adv = case_adversary(spec, case, message, baseline, template)
    t = run_session(spec, adv, seed, behaviors)
    return t, classify_outcome(t, baseline)


def _execute_chunk(args):
    spec, cases, message, baseline, template, behaviors, seed = args
    out = []
    for c in cases:
        t, oc = execute_case(spec, c, message, baseline, template, behaviors, seed)
        out.append((t.defect_id, oc, t.latency_ticks))
    return out


# --- report -------------------------------------------------------------------------


@dataclass
class CampaignReport:
    config: CampaignConfig
    spec_fingerprint: str
    cases: list[FuzzCase] = field(default_factory=list)
    outcomes: list[OutcomeClass] = field(default_factory=list)
    records: list[VulnRecord] = field(default_factory=list)
    evidence: dict = field(default_factory=dict)  # target -> list of outcome kinds
    defects_found: dict = field(default_factory=dict)  # defect id -> case id
    defects_total: int = 0
    cases_to_full_detection: int | None = None
    baseline_latency: int = 0
    latencies: list[int] = field(default_factory=list)
    implanted: dict = field(default_factory=dict)
    partition_before: SearchSpacePartition | None = None
    partition_after: SearchSpacePartition | None = None
    wall_clock_s: float = 0.0  # kept out of report.json so reruns stay byte-identical

    @property
    def cases_executed(self) -> int:
        return len(self.cases)

    def classes_for(self, target: str) -> set[str]:
        return {r.outcome.label() for r in self.records if r.target == target}

    def to_json(self) -> dict:
        counts: dict[str, int] = {}
        for oc in self.outcomes:
            counts[oc.label()] = counts.get(oc.label(), 0) + 1
        return {
            "config": self.config.to_json(),
            "spec_fingerprint": self.spec_fingerprint,
            "cases_executed": self.cases_executed,
            "outcome_counts": dict(sorted(counts.items())),
            "vulnerabilities": [r.to_json() for r in self.records],
            "defects_found": len(self.defects_found),
            "defects_total": self.defects_total,
            "cases_to_full_detection": self.cases_to_full_detection if self.cases_to_full_detection else "inf",
            "ticks": {
                "baseline": self.baseline_latency,
                "max": max(self.latencies, default=0),
                "mean": round(statistics.fmean(self.latencies), 4) if self.latencies else 0,
            },
            "implanted": self.implanted,
            "partition_before": self.partition_before.to_json() if self.partition_before else None,
            "partition_after": self.partition_after.to_json() if self.partition_after else None,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


def _target_of(case: FuzzCase, defect_id: str | None, behaviors: BehaviorRegistry) -> str:
    if defect_id is not None:
        return next(d.target for d in behaviors.command_defects if d.id == defect_id)
    return case.target


def fuzz_schema(spec: ProtocolSpec, config: CampaignConfig):
    msg = spec.message(config.message)
    if not config.fields:
        return msg
    unknown = [f for f in config.fields if f not in msg.fields]
    if unknown:
        raise ValueError(f"{unknown[0]!r} is not a field of {msg.name}")
    return replace(msg, fields=tuple(f for f in msg.fields if f in config.fields))


def baseline_for(spec: ProtocolSpec, config: CampaignConfig, template: AdversaryScript,
                 behaviors: BehaviorRegistry) -> Transcript:
    return run_session(spec, AdversaryScript(template.mode, (), template.known_terms, template.context),
                       config.seed, behaviors)


def reexecute(spec: ProtocolSpec, report: "CampaignReport", case: FuzzCase,
              adversary: AdversaryScript | None = None, behaviors: BehaviorRegistry | None = None):
    """Run one reported case again; returns (adversary script, transcript, outcome)."""
    behaviors = behaviors or seeded_behavior_table(report.config.profile, spec)
    template = adversary or AdversaryScript("MitmRelay")
    baseline = baseline_for(spec, report.config, template, behaviors)
    adv = case_adversary(spec, case, report.config.message, baseline, template)
    t = run_session(spec, adv, report.config.seed, behaviors)
    return adv, t, classify_outcome(t, baseline)


def run_campaign(
    spec: ProtocolSpec,
    config: CampaignConfig,
    adversary: AdversaryScript | None = None,
    behaviors: BehaviorRegistry | None = None,
    partition: SearchSpacePartition | None = None,
    jobs: int = 1,
) -> CampaignReport:
    """Execute cases in generator (or scheduler) order up to the budget."""
    started = time.perf_counter()
    behaviors = behaviors or seeded_behavior_table(config.profile, spec)
    template = adversary or AdversaryScript("MitmRelay")
    strategy = config.strategy
    schema = None if strategy.command_level else fuzz_schema(spec, config)
    if schema is not None and not schema.fields:
        raise ValueError("schema has no fields to fuzz")
    if partition is None:
        partition = partition_search_space(spec, config.assumptions)
    sconf = StrategyConfig(strategy, config.budget, config.seed,
                           partition if strategy is Strategy.FORMAL_GUIDED else None,
                           config.alpha, config.beta, config.epsilon)
    baseline = baseline_for(spec, config, template, behaviors)
    report = CampaignReport(config, spec.fingerprint(), baseline_latency=baseline.latency_ticks,
                            implanted=behaviors.implanted(), partition_before=partition)
    report.defects_total = len(behaviors.command_defects) if strategy.command_level else 0
    stream = generate(spec, schema, sconf)
    seen: set = set()

    def absorb(case: FuzzCase, defect_id: str | None, oc: OutcomeClass) -> None:
        report.cases.append(case)
        report.outcomes.append(oc)
        target = _target_of(case, defect_id, behaviors)
        report.evidence.setdefault(target, []).append(oc.kind.value)
        novel = False
        if oc.severity is not None:
            novel = (target, oc.label()) not in seen
            seen.add((target, oc.label()))
            report.records.append(VulnRecord(case.id, oc, target, oc.severity, novel))
        if defect_id is not None and defect_id not in report.defects_found:
            report.defects_found[defect_id] = case.id
            if len(report.defects_found) == report.defects_total:
                report.cases_to_full_detection = len(report.cases)
        if isinstance(stream, CommandCaseStream):
            stream.feedback(case, oc.label(), oc.severity is not None)

    adaptive = strategy is Strategy.PROBABILITY_BASED
    if jobs > 1 and not adaptive:
        cases = list(stream)
        chunks = [cases[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_execute_chunk, [
                (spec, ch, config.message, baseline, template, behaviors, config.seed) for ch in chunks]))
        # merge back into case order through the single accumulator
        merged: list = [None] * len(cases)
        for w, part in enumerate(parts):
            for j, res in enumerate(part):
                merged[w + j * jobs] = res
        for case, (defect_id, oc, latency) in zip(cases, merged):
            absorb(case, defect_id, oc)
            report.latencies.append(latency)
            if config.stop_at_full_detection and report.cases_to_full_detection:
                break
    else:
        for case in stream:
            t, oc = execute_case(spec, case, config.message, baseline, template, behaviors, config.seed)
            absorb(case, t.defect_id, oc)
            report.latencies.append(t.latency_ticks)
            if config.stop_at_full_detection and report.cases_to_full_detection:
                break
    if not report.cases:
        raise ValueError("generator produced no cases")
    if not strategy.command_level and report.cases_executed < config.budget:
        # the stream was exhausted: everything reachable has been seen
        novel_at = [i for i, r in enumerate(report.records) if r.novel]
        if novel_at:
            last = report.records[novel_at[-1]].case_id
            report.cases_to_full_detection = 1 + next(i for i, c in enumerate(report.cases) if c.id == last)
    report.partition_after = fortify(partition, report, config.k_downgrade)
    report.wall_clock_s = time.perf_counter() - started
    log.info("campaign %s: %d cases, %d records, %.2fs", strategy.value, report.cases_executed,
             len(report.records), report.wall_clock_s)
    return report


# --- fortification ------------------------------------------------------------------


def fortify(partition: SearchSpacePartition, report: CampaignReport, k: int = DEFAULT_K) -> SearchSpacePartition:
    """Fold fuzz evidence into the Confidentiality entries of fuzzed identifiers.

    StructuralReject outcomes say nothing about the identifier's semantics
    and are not counted as evidence.  The formal verdict is kept in
    ``prior`` whenever fuzz evidence replaces it.
    """
    out = partition
    for target, kinds in sorted(report.evidence.items()):
        key = (target, SecurityProperty.CONFIDENTIALITY)
        if key not in partition.entries:
            continue
        kinds = [x for x in kinds if x != OutcomeKind.STRUCTURAL_REJECT.value]
        if not kinds:
            continue
        entry = partition.entries[key]
        prior = entry.prior or entry.verdict
        high = any(OutcomeKind(x) in HIGH for x in kinds)
        if high:
            if entry.verdict.is_safe:
                new = PartitionEntry(Verdict.uncertain(FUZZ_CONTRADICTION), Provenance.FUZZ_CONFIRMED, "high", prior)
            else:
                new = PartitionEntry(entry.verdict, Provenance.FUZZ_CONFIRMED, "high", entry.prior)
        elif all(x in BENIGN for x in kinds):
            if entry.verdict.is_uncertain:
                if len(kinds) < k:
                    continue
                new = PartitionEntry(Verdict.safe(), Provenance.FUZZ_DOWNGRADED, "low", prior)
            else:
                new = PartitionEntry(Verdict.safe(), Provenance.FUZZ_CONFIRMED, "low", prior)
        else:
            continue
        out = out.replace(key, new)
    return out


# --- benchmarks ---------------------------------------------------------------------


@dataclass
class BenchRow:
    strategy: str
    level: str
    trial: int
    cases_to_full_detection: int | None


@dataclass
class BenchTable:
    rows: list[BenchRow]

    def summary(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for name in dict.fromkeys(r.strategy for r in self.rows):
            vals = [r.cases_to_full_detection for r in self.rows if r.strategy == name]
            finite = [v for v in vals if v is not None]
            out[name] = {
                "level": next(r.level for r in self.rows if r.strategy == name),
                "trials": len(vals),
                "mean": statistics.fmean(finite) if len(finite) == len(vals) else float("inf"),
                "median": statistics.median(finite) if len(finite) == len(vals) else float("inf"),
            }
        return out

    def ratio(self, num: str = Strategy.PROBABILITY_BASED.value, den: str = Strategy.UNIFORM_RANDOM.value):
        s = self.summary()
        if num not in s or den not in s:
            return None
        return s[num]["mean"] / s[den]["mean"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "level", "trial", "cases_to_full_detection"])
        for r in self.rows:
            w.writerow([r.strategy, r.level, r.trial,
                        "inf" if r.cases_to_full_detection is None else r.cases_to_full_detection])
        return buf.getvalue()


def efficiency_bench(
    spec: ProtocolSpec,
    strategies,
    trials: int = 20,
    seed: int = 0,
    budget: int = 20000,
    profile: str = "default",
    message: str = DEFAULT_MESSAGE,
) -> BenchTable:
    """Command-level strategies: cases-to-full-detection per trial, trial ``t``
    using seed ``seed + t`` for every strategy.  Bit-level strategies: one row
    holding the exact case count for ``message``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    strategies = [s if isinstance(s, Strategy) else Strategy.parse(s) for s in strategies]
    behaviors = seeded_behavior_table(profile, spec)
    rows = []
    for s in strategies:
        if not s.command_level:
            rows.append(BenchRow(s.value, "bit", 0, count_cases(s, spec.message(message), spec)))
            continue
        for t in range(trials):
            cfg = CampaignConfig(s, budget, seed + t, profile, stop_at_full_detection=True)
            rep = run_campaign(spec, cfg, behaviors=behaviors, partition=_EMPTY)
            rows.append(BenchRow(s.value, "command", t, rep.cases_to_full_detection))
    return BenchTable(rows)


_EMPTY = SearchSpacePartition({})


# --- artifacts ----------------------------------------------------------------------


def vulns_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", "target", "class", "severity", "novel"])
    for r in report.records:
        w.writerow([r.case_id, r.target, r.outcome.label(), r.severity, str(r.novel).lower()])
    return buf.getvalue()


def write_report(report: CampaignReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "vulns": out / "vulns.csv",
        "partition": out / "partition.json",
        "cases": out / "cases.jsonl",
    }
    paths["report"].write_text(report.dumps(), encoding="utf-8", newline="\n")
    paths["vulns"].write_text(vulns_csv(report), encoding="utf-8", newline="\n")
    part = report.partition_after or report.partition_before
    paths["partition"].write_text(json.dumps(part.to_json(), sort_keys=True, indent=2) + "\n",
                                  encoding="utf-8", newline="\n")
    write_cases(paths["cases"], report.cases)
    return paths
