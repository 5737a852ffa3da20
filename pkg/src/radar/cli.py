"""The ``radar`` command line: ingest, evaluate, simulate, sweep, report, stats,
pause/resume, validate-config, replay.

Exit codes: 0 success, 1 internal error, 2 input validation error. Unknown
flags are errors. Full flag reference in docs/cli.md.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .agent import make_backend
from .diffs import validate_record
from .eligibility import LedgerEntry, LedgerKeeper, LedgerOutcome
from .errors import InputError, RadarError
from .eventlog import EventLog, read_jsonl, replay, write_jsonl
from .funnel import Outcome, PauseControl, evaluate_diff
from .policy import PolicySet, PxThreshold, load_policy
from .risk import DrsEngine
from .sim import (
    compare_radar_vs_human,
    load_scenario,
    simulate,
    threshold_sweep,
)
from .stats import (
    DecisionEvent,
    Group,
    LatencyMetric,
    MetricWindow,
    TwoByTwoTable,
    approve_rate,
    fisher_exact_two_sided,
    median_latency,
    rate_ratio,
    verification_pass_rate,
)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}")


def _load_policy_file(path: str | None) -> PolicySet:
    if path is None:
        return PolicySet()
    return load_policy(_read_text(path))


def _load_pause(path: str | None) -> PauseControl | None:
    if path is None or not Path(path).exists():
        return None
    return PauseControl.from_dict(json.loads(_read_text(path)))


def _load_ledgers(path: str | None) -> LedgerKeeper:
    """Ledger file: JSONL of {"runbook", "at", "outcome"} entries, ordered per runbook."""
    keeper = LedgerKeeper()
    if path is None:
        return keeper
    for row in read_jsonl(path):
        name = str(row["runbook"])
        ledger = keeper.ensure_ledger(name)
        ledger.append(LedgerEntry(at=int(row["at"]), outcome=LedgerOutcome(row["outcome"])))
    return keeper


# --- subcommands ---------------------------------------------------------------

def _cmd_validate_config(args) -> int:
    policy = load_policy(_read_text(args.policy))
    print(f"ok: {len(policy.orgs)} org override(s), {len(policy.runbooks)} runbook polic(ies)")
    return 0


def _cmd_ingest(args) -> int:
    events_by_diff: dict[str, list[dict[str, Any]]] = {}
    errors: list[str] = []
    if args.events:
        for lineno, line in enumerate(_read_text(args.events).splitlines(), start=1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
                events_by_diff.setdefault(str(event["diff_id"]), []).append(event)
            except (json.JSONDecodeError, KeyError) as exc:
                errors.append(f"{args.events} line {lineno}: {exc}")

    valid: list[dict[str, Any]] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(_read_text(args.diffs).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            diff = validate_record(record, events_by_diff.get(str(record.get("id")), ()))
            if diff.id in seen_ids:
                raise InputError(f"id: duplicate diff id {diff.id!r} in stream")
            seen_ids.add(diff.id)
            valid.append(record)
        except (json.JSONDecodeError, InputError) as exc:
            errors.append(f"line {lineno}: {exc}")
    for err in errors:
        print(err, file=sys.stderr)
    if args.out:
        write_jsonl(args.out, valid)
    print(f"{len(valid)} valid record(s), {len(errors)} error(s)")
    return 2 if errors else 0


def _cmd_evaluate(args) -> int:
    policy = _load_policy_file(args.policy)
    keeper = _load_ledgers(args.ledger)
    pause = _load_pause(args.control)
    drs = DrsEngine(policy.drs)
    if args.calibration:
        for row in read_jsonl(args.calibration):
            drs.observe(float(row["raw_score"]))
    backend = make_backend(policy.acr)

    errors: list[str] = []
    decisions: list[dict[str, Any]] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(_read_text(args.diffs).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            diff = validate_record(json.loads(line))
            if diff.id in seen_ids:
                raise InputError(f"id: duplicate diff id {diff.id!r} in stream")
            seen_ids.add(diff.id)
        except (json.JSONDecodeError, InputError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        decision = evaluate_diff(diff, policy, keeper, drs, backend, pause, now=diff.created_at)
        decisions.append(
            {
                "diff_id": decision.diff_id,
                "outcome": decision.outcome.value,
                "reasons": [r.value for r in decision.reasons],
                "stages": [
                    {"stage": s.stage.value, "passed": s.passed, "reasons": [r.value for r in s.reasons]}
                    for s in decision.stages
                ],
                "rank": decision.rank,
                "confidence": decision.confidence,
                "effort": decision.effort,
                "land_at": decision.landing.land_at if decision.landing else None,
            }
        )
    for err in errors:
        print(err, file=sys.stderr)
    if args.out:
        write_jsonl(args.out, decisions)
    else:
        for row in decisions:
            print(json.dumps(row, sort_keys=True))
    return 2 if errors else 0


def _cmd_simulate(args) -> int:
    cfg = load_scenario(_read_text(args.scenario))
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    policy = _load_policy_file(args.policy)
    pause = _load_pause(args.control)
    result = simulate(cfg, policy, pause)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = EventLog(out / "events.jsonl")
    for event in result.lifecycle:
        log.append("lifecycle", event)
    for decision in result.decisions:
        log.append_decision(decision)
    (out / "report.json").write_text(
        json.dumps(result.metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text(_format_report_text(result.metrics), encoding="utf-8")
    (out / "run.json").write_text(result.serialize() + "\n", encoding="utf-8")
    print(f"simulated {result.metrics['n_diffs']} diffs -> {out}")
    return 0


def _format_report_text(metrics: dict[str, Any]) -> str:
    lines = ["simulation report", "=================", ""]
    lines.append(f"diffs:            {metrics['n_diffs']}")
    lines.append(f"evaluated:        {metrics['evaluated']}")
    for outcome, count in metrics["outcomes"].items():
        lines.append(f"  {outcome:32s} {count}")
    lines.append(f"radar landed:     {metrics['radar_landed']}")
    lines.append(f"human landed:     {metrics['human_landed']}")
    lines.append(f"overridden:       {metrics['overridden']}")
    lines.append(f"open backlog:     {metrics['open_backlog']}")

    def fmt(x, pct=False):
        if x is None:
            return "n/a"
        return f"{100 * x:.2f}%" if pct else f"{x:.4g}"

    lines.append(f"approve rate:     {fmt(metrics['approve_rate'], pct=True)}")
    lines.append(f"verification:     {fmt(metrics['verification_pass_rate'], pct=True)}")
    ttc = metrics["median_time_to_close"]
    wall = metrics["median_review_wall_time"]
    lines.append(f"median ttc:       radar={fmt(ttc['radar'])}s human={fmt(ttc['human'])}s")
    lines.append(f"median wall:      radar={fmt(wall['radar'])}s human={fmt(wall['human'])}s")
    lines.append(f"ttc ratio (h/r):  {fmt(metrics['time_to_close_ratio_human_over_radar'])}")
    lines.append(f"ttc reduction:    {fmt(metrics['time_to_close_reduction_percent'])}%")
    lines.append(f"wall ratio (h/r): {fmt(metrics['review_wall_time_ratio_human_over_radar'])}")
    lines.append(f"wall reduction:   {fmt(metrics['review_wall_time_reduction_percent'])}%")
    for name in ("reverts", "pis"):
        block = metrics[name]
        lines.append(
            f"{name}: table={block['table']} ratio={fmt(block['rate_ratio'])} p={fmt(block['p_value'])}"
        )
    if metrics["did_time_to_close"]:
        did = metrics["did_time_to_close"]
        lines.append(f"DiD ttc:          mean={fmt(did['mean_did'])}s median={fmt(did['median_did'])}s")
    return "\n".join(lines) + "\n"


def _cmd_sweep(args) -> int:
    cfg = load_scenario(_read_text(args.scenario))
    policy = _load_policy_file(args.policy)
    thresholds = [PxThreshold(int(x)) for x in args.thresholds.split(",")]
    rows = threshold_sweep(cfg, policy, thresholds)
    payload = [row.to_dict() for row in rows]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(payload[0].keys()))
            writer.writeheader()
            writer.writerows(payload)
        print(f"swept {len(rows)} thresholds -> {out}")
    else:
        print(json.dumps(payload, indent=2))
    return 0


def _load_decisions(path: str) -> list[DecisionEvent]:
    decisions = []
    for _, record_type, data in _read_log_records(path):
        if record_type == "decision":
            decisions.append(DecisionEvent.from_dict(data))
    return decisions


def _read_log_records(path: str):
    from .eventlog import read_log

    return read_log(path)


def _cmd_report(args) -> int:
    decisions = _load_decisions(args.events)
    if not decisions:
        raise InputError("no decision records in the event log")
    anchor = args.anchor
    if anchor is None:
        anchor = max(d.published for d in decisions if d.published is not None)
    window = MetricWindow.l7(anchor) if args.window == "l7" else MetricWindow.all()

    def guarded(fn, *a):
        try:
            return fn(*a)
        except RadarError:
            return None

    closed = [d for d in decisions if d.closed is not None]
    rows = {
        "window": args.window,
        "anchor": anchor,
        "diffs": sum(1 for d in decisions if window.contains(d.published)),
        "approve_rate": guarded(approve_rate, decisions, window),
        "verification_pass_rate": guarded(verification_pass_rate, decisions, window),
        "median_time_to_close_radar": guarded(
            median_latency, closed, LatencyMetric.TIME_TO_CLOSE, Group.RADAR, window
        ),
        "median_time_to_close_human": guarded(
            median_latency, closed, LatencyMetric.TIME_TO_CLOSE, Group.HUMAN, window
        ),
        "median_wall_radar": guarded(
            median_latency,
            [d for d in closed if d.review_ended is not None],
            LatencyMetric.REVIEW_WALL_TIME,
            Group.RADAR,
            window,
        ),
        "median_wall_human": guarded(
            median_latency,
            [d for d in closed if d.review_ended is not None],
            LatencyMetric.REVIEW_WALL_TIME,
            Group.HUMAN,
            window,
        ),
    }
    if args.format == "json":
        print(json.dumps(rows, indent=2, sort_keys=True))
    elif args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows.keys()))
        writer.writeheader()
        writer.writerow(rows)
        print(buf.getvalue(), end="")
    else:
        for key, value in rows.items():
            print(f"{key}: {value if value is not None else 'n/a'}")
    return 0


def _cmd_stats(args) -> int:
    table = TwoByTwoTable(args.a, args.b, args.c, args.d)
    if args.stat == "fisher":
        print(f"{fisher_exact_two_sided(table):.6g}")
    else:
        print(f"{rate_ratio(table):.6g}")
    return 0


def _cmd_recall(args) -> int:
    from .risk import recall_at_flag_rate

    labeled = [
        (float(row["raw_score"]), bool(row["caused_incident"]))
        for row in read_jsonl(args.labeled)
    ]
    print(f"{recall_at_flag_rate(labeled, args.flag_rate):.6g}")
    return 0


def _cmd_pause(args, paused: bool) -> int:
    control = _load_pause(args.control) or PauseControl()
    targets = []
    if args.runbook:
        targets.append(("source", args.runbook))
    if args.source:
        targets.append(("source", args.source))
    if args.org:
        targets.append(("org", args.org))
    if not targets:
        raise InputError("nothing to pause/resume: pass --runbook, --source, or --org")
    for kind, name in targets:
        pool = control.paused_sources if kind == "source" else control.paused_orgs
        if paused:
            pool.add(name)
        else:
            pool.discard(name)
    Path(args.control).write_text(
        json.dumps(control.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    verb = "paused" if paused else "resumed"
    print(f"{verb}: {', '.join(name for _, name in targets)} -> {args.control}")
    return 0


def _cmd_replay(args) -> int:
    state = replay(args.events)
    print(json.dumps(state.summary(), indent=2, sort_keys=True))
    return 0


# --- argument wiring -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radar", description="risk-aware diff auto-review funnel"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-config", help="parse and validate a policy document")
    p.add_argument("--policy", required=True)
    p.set_defaults(fn=_cmd_validate_config)

    p = sub.add_parser("ingest", help="validate a diffs.jsonl stream")
    p.add_argument("--diffs", required=True)
    p.add_argument("--events", default=None, help="parallel events.jsonl keyed by diff_id")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("evaluate", help="run diffs through the funnel")
    p.add_argument("--diffs", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--ledger", default=None, help="runbook history JSONL")
    p.add_argument("--control", default=None, help="pause-control file")
    p.add_argument("--calibration", default=None, help="raw-score JSONL to prefill the DRS window")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("simulate", help="run a scenario on the virtual clock")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--control", default=None)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("sweep", help="simulate across DRS thresholds")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--thresholds", default="25,50", help="comma-separated PX values")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("report", help="windowed metrics over an event log")
    p.add_argument("--events", required=True)
    p.add_argument("--window", choices=("l7", "all"), default="all")
    p.add_argument("--anchor", type=int, default=None, help="window anchor (unix seconds)")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("stats", help="2x2 table statistics")
    p.add_argument("stat", choices=("fisher", "rate-ratio"))
    p.add_argument("a", type=int)
    p.add_argument("b", type=int)
    p.add_argument("c", type=int)
    p.add_argument("d", type=int)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("recall", help="recall at flag rate over a labeled score corpus")
    p.add_argument("--labeled", required=True, help="JSONL of {raw_score, caused_incident}")
    p.add_argument("--flag-rate", type=float, required=True)
    p.set_defaults(fn=_cmd_recall)

    p = sub.add_parser("pause", help="pause a source, runbook, or org")
    p.add_argument("--runbook", default=None)
    p.add_argument("--source", default=None)
    p.add_argument("--org", default=None)
    p.add_argument("--control", required=True)
    p.set_defaults(fn=lambda args: _cmd_pause(args, paused=True))

    p = sub.add_parser("resume", help="resume a paused source, runbook, or org")
    p.add_argument("--runbook", default=None)
    p.add_argument("--source", default=None)
    p.add_argument("--org", default=None)
    p.add_argument("--control", required=True)
    p.set_defaults(fn=lambda args: _cmd_pause(args, paused=False))

    p = sub.add_parser("replay", help="rebuild state from an event log")
    p.add_argument("--events", required=True)
    p.set_defaults(fn=_cmd_replay)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RadarError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
