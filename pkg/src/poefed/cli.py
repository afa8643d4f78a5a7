"""Command-line front end: run scenarios, verify ledgers, review accidents,
and inject attacks. Exit codes: 0 success, 1 domain failure (invalid chain,
runtime protocol failure), 2 configuration or file errors."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .errors import (
    InvalidAttack,
    InvalidConfig,
    LedgerFormatError,
    NotFound,
    PoefedError,
)
from .figures import render_discrepancy, render_scene
from .harness import (
    ScenarioConfig,
    SimOutcome,
    build_registry,
    inject_attack,
    load_attack,
    load_scenario,
    run_scenario,
    write_outcome,
)
from .ledger import (
    forensic_review,
    load_ledger_file,
    report_to_dict,
    verify_ledger_file,
)

LOG_MODES = ("off", "summary", "full")


def _cmd_run(args, mode: str) -> int:
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    ledger = None
    if args.ledger is not None:
        ledger = load_ledger_file(args.ledger)
    outcome = run_scenario(cfg, ledger)
    paths = write_outcome(outcome, args.out, mode)
    paths["scene"] = render_scene(
        cfg, outcome, os.path.join(args.out, "scene.png"))
    _print_run_summary(args.scenario, outcome, paths)
    return 0


def _print_run_summary(scenario_path: str, outcome: SimOutcome,
                       paths: dict[str, str]) -> None:
    print(f"seed: {outcome.seed}")
    print(f"scenario: {scenario_path}")
    print(f"accident: {outcome.accident_id.hex()}")
    print(f"classification: {outcome.classification.value}, "
          f"blocks: {outcome.metrics.blocks_produced}")
    for a in outcome.metrics.attack_outcomes:
        print(f"attack {a.kind}: {a.outcome}")
    print("wrote: " + ", ".join(paths[k] for k in sorted(paths)))


def _cmd_verify(args, mode: str) -> int:
    registry = None
    if args.scenario is not None:
        registry, _ = build_registry(load_scenario(args.scenario).world)
    report = verify_ledger_file(args.ledger, registry)
    if report.valid:
        suffix = "" if registry is not None else " (signatures not checked)"
        print(f"valid: {report.checked} blocks{suffix}")
        return 0
    print(f"invalid: first_bad_height={report.first_bad_height} "
          f"(checked {report.checked} blocks)")
    return 1


def _cmd_forensics(args, mode: str) -> int:
    try:
        accident_id = bytes.fromhex(args.accident)
    except ValueError:
        print(f"error: --accident {args.accident!r} is not valid hex",
              file=sys.stderr)
        return 2
    ledger = load_ledger_file(args.ledger)
    report = forensic_review(ledger, accident_id, args.tolerance)
    print(f"accident: {report.accident_id.hex()}")
    print(f"tolerance: {report.tolerance:g} m/s")
    header = f"{'vehicle':>8}  {'self':>6}  {'estimates':>24}  " \
             f"{'spread':>7}  flagged"
    print(header)
    for c in report.comparisons:
        estimates = ",".join(f"{e:.2f}" for e in c.witness_estimates) or "-"
        spread = f"{c.spread:.2f}" if c.spread is not None else "-"
        print(f"{c.subject:>8}  {c.self_reported:>6.2f}  {estimates:>24}  "
              f"{spread:>7}  {'YES' if c.flagged else 'no'}")
    flagged = sum(1 for c in report.comparisons if c.flagged)
    print(f"flagged: {flagged} of {len(report.comparisons)}")
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        figure = render_discrepancy(
            report, os.path.join(args.out, "discrepancy.png"))
        report_path = os.path.join(args.out, "forensics.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote: {figure}, {report_path}")
    return 0


def _cmd_attack(args, mode: str) -> int:
    cfg = load_scenario(args.scenario)
    spec = load_attack(args.attack)
    cfg = inject_attack(cfg, spec)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    outcome = run_scenario(cfg)
    paths = write_outcome(outcome, args.out, mode)
    paths["scene"] = render_scene(
        cfg, outcome, os.path.join(args.out, "scene.png"))
    _print_run_summary(args.scenario, outcome, paths)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poefed",
        description="accident event recording simulator and ledger tools")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario end to end")
    run.add_argument("--scenario", required=True, help="scenario JSON path")
    run.add_argument("--out", required=True, help="artifact directory")
    run.add_argument("--seed", type=int, default=None,
                     help="override the scenario seed")
    run.add_argument("--ledger", default=None,
                     help="existing ledger file to extend")
    run.set_defaults(func=_cmd_run)

    verify = sub.add_parser("verify", help="check a ledger file's chain")
    verify.add_argument("--ledger", required=True, help="ledger file path")
    verify.add_argument("--scenario", default=None,
                        help="scenario JSON supplying the key registry")
    verify.set_defaults(func=_cmd_verify)

    forensics = sub.add_parser(
        "forensics", help="review a recorded accident for discrepancies")
    forensics.add_argument("--ledger", required=True,
                           help="ledger file path")
    forensics.add_argument("--accident", required=True,
                           help="accident id (hex)")
    forensics.add_argument("--tolerance", type=float, default=2.0,
                           help="flag threshold in m/s (default 2.0)")
    forensics.add_argument("--out", default=None,
                           help="optional artifact directory")
    forensics.set_defaults(func=_cmd_forensics)

    attack = sub.add_parser(
        "attack", help="inject an attack spec into a scenario and run it")
    attack.add_argument("--scenario", required=True,
                        help="scenario JSON path")
    attack.add_argument("--attack", required=True,
                        help="attack spec JSON path")
    attack.add_argument("--out", required=True, help="artifact directory")
    attack.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    attack.set_defaults(func=_cmd_attack)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    mode = os.environ.get("POE_LOG", "summary")
    if mode not in LOG_MODES:
        print(f"error: POE_LOG={mode!r} (expected one of "
              f"{', '.join(LOG_MODES)})", file=sys.stderr)
        return 2
    try:
        return args.func(args, mode)
    except (InvalidConfig, InvalidAttack, NotFound, LedgerFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PoefedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
