"""``nsafuzz`` command-line front end.

Exit codes: 0 success, 2 user-input error, 3 I/O error, 4 internal error.
Findings are not failures; a campaign that finds vulnerabilities exits 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analyzer import (
    MITM,
    AnalyzerError,
    DEFAULT_DEPTH_BUDGET,
    partition_search_space,
)
from .campaign import (
    CampaignConfig,
    efficiency_bench,
    parse_campaign_config,
    reexecute,
    run_campaign,
    write_report,
)
from .fuzz_gen import Strategy, count_cases
from .proto_model import SpecError, baseline_text, load_spec, parse_spec
from .sim.behaviors import ProfileError, seeded_behavior_table
from .sim.session import replay_records, write_records

log = logging.getLogger("nsafuzz")

EXIT_OK, EXIT_USER, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
BASELINE_NAMES = ("nsa_baseline", "nsa_baseline.spec", "baseline")


class UserError(Exception):
    pass


class InvariantError(Exception):
    pass


def _load(path: str):
    """A spec path, or the bundled baseline by name when no such file exists."""
    if not os.path.exists(path) and os.path.basename(path) in BASELINE_NAMES:
        return parse_spec(baseline_text())
    return load_spec(path)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("NSAFUZZ_OUT") or "nsafuzz-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _assumptions(items) -> list[str]:
    out = []
    for item in items or ():
        key, _, value = item.partition("=")
        key = key.strip()
        if key in ("mitm", MITM) and not value:
            out.append(MITM)
        elif key == "attacker_knows" and value:
            out += [f"attacker_knows({v.strip()})" for v in value.split(",") if v.strip()]
        else:
            raise UserError(f"bad --assume {item!r}; use attacker_knows=NAME or mitm")
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n")


# --- subcommands ------------------------------------------------------------------


def cmd_validate(args) -> int:
    spec = _load(args.spec)
    print(f"ok: {args.spec} ({len(spec.messages)} messages, {len(spec.identifiers)} identifiers, "
          f"{len(spec.keys)} keys; fingerprint {spec.fingerprint()})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    spec = _load(args.spec)
    assumptions = _assumptions(args.assume)
    part = partition_search_space(spec, assumptions, args.depth)
    out = _out_dir(args)
    _write_json(out / "partition.json", part.to_json())
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for old in traces.glob("*.json"):
        old.unlink()
    rows = []
    for (name, prop), entry in part.entries.items():
        v = entry.verdict
        rows.append((name, prop.value, str(v)))
        if v.is_attack:
            _write_json(traces / f"{name}__{prop.value}.json", v.trace.to_json())
    width = max(len(r[0]) for r in rows)
    print(f"{'target':<{width}}  {'property':<15}  verdict")
    for name, prop, v in rows:
        print(f"{name:<{width}}  {prop:<15}  {v}")
    counts = {k: len(v) for k, v in part.sets().items()}
    if counts["AttackTraceFound"] == 0 and counts["Uncertain"] == 0:
        print("summary: all Safe")
    else:
        print("summary: " + ", ".join(f"{k}={n}" for k, n in counts.items()))
    exposed = [k.name for k in spec.keys if part.verdict(k.name).is_attack]
    if exposed:
        print("exposed keys: " + ", ".join(exposed))
    return EXIT_OK


def _fuzz_config(args) -> CampaignConfig:
    text = ""
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
    overrides = {"strategy": args.strategy, "budget": args.budget, "profile": args.profile,
                 "seed": args.seed if args.seed is not None else None}
    if not text and not args.strategy:
        overrides["strategy"] = "FormalGuided"
    return parse_campaign_config(text, overrides)


def cmd_fuzz(args) -> int:
    spec = _load(args.spec)
    cfg = _fuzz_config(args)
    if cfg.strategy is Strategy.BRUTE_FORCE:
        total = count_cases(Strategy.BRUTE_FORCE, spec.message(cfg.message), spec)
        if not args.allow_huge:
            print(f"refusing brute force: {total} cases (2^{total.bit_length() - 1}); "
                  "pass --allow-huge with a --budget to run a truncated prefix", file=sys.stderr)
            return EXIT_USER
        if args.budget is None:
            raise UserError("--allow-huge needs an explicit --budget")
    report = run_campaign(spec, cfg, jobs=args.jobs)
    out = _out_dir(args)
    paths = write_report(report, out)
    if args.record:
        beh = seeded_behavior_table(cfg.profile, spec)
        runs = []
        for case in report.cases:
            adv, t, _ = reexecute(spec, report, case, behaviors=beh)
            runs.append((adv, beh, t))
        write_records(args.record, runs)
    high = sum(1 for r in report.records if r.severity == "High")
    print(f"{cfg.strategy.value}: {report.cases_executed} cases, {len(report.records)} vulnerability records "
          f"({high} high), written to {paths['report'].parent}")
    for r in report.records:
        if r.novel:
            print(f"  {r.case_id}  {r.target}  {r.outcome.label()}  {r.severity}")
    return EXIT_OK


def cmd_replay(args) -> int:
    spec = _load(args.spec)
    diffs = replay_records(args.replay, spec)
    for d in diffs:
        print(d)
    if diffs:
        raise InvariantError(f"{len(diffs)} replay difference(s)")
    print(f"replay identical: {args.replay}")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = _load(args.spec)
    try:
        strategies = [Strategy.parse(s.strip()) for s in args.strategies.split(",") if s.strip()]
    except ValueError as e:
        raise UserError(str(e)) from None
    if args.trials < 1:
        raise UserError("--trials must be >= 1")
    table = efficiency_bench(spec, strategies, args.trials, args.seed or 0, args.budget, args.profile)
    out = _out_dir(args)
    (out / "bench.csv").write_text(table.to_csv(), encoding="utf-8", newline="\n")
    for name, s in table.summary().items():
        if s["level"] == "bit":
            print(f"{name}: {int(s['mean'])} cases")
        else:
            print(f"{name}: mean {s['mean']:.2f}, median {s['median']} over {s['trials']} trial(s)")
    r = table.ratio()
    if r is not None:
        print(f"probability/random = {r:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.dir or args.out or os.environ.get("NSAFUZZ_OUT") or "nsafuzz-out") / "report.json"
    rep = json.loads(path.read_text(encoding="utf-8"))
    cfg = rep["config"]
    print(f"strategy {cfg['strategy']} seed {cfg['seed']} profile {cfg['profile']}")
    print(f"cases executed: {rep['cases_executed']}")
    for label, n in rep["outcome_counts"].items():
        print(f"  {label}: {n}")
    novel = [v for v in rep["vulnerabilities"] if v["novel"]]
    print(f"novel vulnerabilities: {len(novel)}")
    if rep["defects_total"]:
        print(f"seeded defects found: {rep['defects_found']}/{rep['defects_total']}, "
              f"cases to full detection: {rep['cases_to_full_detection']}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsafuzz", description="Formal-guided fuzzing of the NSA attach flow.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=None, help="seed (default 0)")
    p.add_argument("--out", default=None, help="output directory (default $NSAFUZZ_OUT or ./nsafuzz-out)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for non-adaptive campaigns")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a spec file")
    v.add_argument("spec")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="formal analysis and search-space partition")
    a.add_argument("spec")
    a.add_argument("--assume", action="append", metavar="ATOM",
                   help="attacker_knows=NAME[,NAME] or mitm (repeatable)")
    a.add_argument("--depth", type=int, default=DEFAULT_DEPTH_BUDGET, help="derivation depth budget")
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("fuzz", help="run a fuzz campaign")
    f.add_argument("spec")
    f.add_argument("--config", help="campaign config file")
    f.add_argument("--strategy", help="BruteForce|RuleBased|FormalGuided|UniformRandom|ProbabilityBased "
                                      "(or brute, rule, formal, random, probability)")
    f.add_argument("--budget", type=int)
    f.add_argument("--profile", help="behavior profile: default or clean")
    f.add_argument("--allow-huge", action="store_true", help="permit a truncated brute-force run")
    f.add_argument("--record", metavar="PATH", help="dump executed-case transcripts as NDJSON")
    f.add_argument("--replay", metavar="PATH", help="re-execute recorded transcripts and diff")
    f.set_defaults(func=cmd_fuzz)

    b = sub.add_parser("bench", help="strategy efficiency benchmark")
    b.add_argument("spec")
    b.add_argument("--strategies", default="UniformRandom,ProbabilityBased")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--budget", type=int, default=20000, help="per-trial case cap for command-level strategies")
    b.add_argument("--profile", default="default")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="summarise report.json in an output directory")
    r.add_argument("dir", nargs="?")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USER if e.code else EXIT_OK
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    if args.command == "fuzz" and args.replay:
        func = cmd_replay
    try:
        return func(args)
    except (SpecError, AnalyzerError, ProfileError, UserError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # pragma: no cover - last-resort guard
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
