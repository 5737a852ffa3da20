"""Append-only event log: decision and lifecycle records with replayable state.

Records are JSON Lines, never mutated or reordered, each carrying a
monotonically increasing sequence number. Readers stop at the last complete
record, so a log truncated at any record boundary replays to a valid prefix
state. Replay rebuilds the runbook ledgers from lifecycle outcomes and the
metric inputs from decision records.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .diffs import EventKind, LifecycleEvent, SourceType
from .eligibility import RunbookLedger
from .errors import InputError
from .stats import DecisionEvent

LEDGER_EVENT_KINDS = frozenset(
    {EventKind.LANDED, EventKind.REVERTED, EventKind.PI_ATTRIBUTED, EventKind.HUMAN_REJECTED}
)


class GapInLog(InputError):
    pass


class EventLog:
    """Single-writer appender. Reopening continues the sequence from the last record.

    A partial trailing record (crash mid-write) is truncated away on open so
    subsequent appends never concatenate onto it.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._next_seq = 0
        if self.path.exists():
            self._truncate_partial_tail()
            records = read_log(self.path)
            if records:
                self._next_seq = records[-1][0] + 1

    def _truncate_partial_tail(self) -> None:
        raw = self.path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            keep = raw.rfind(b"\n") + 1  # 0 when no newline at all
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    def append(self, record_type: str, data: dict[str, Any]) -> int:
        seq = self._next_seq
        line = json.dumps(
            {"seq": seq, "type": record_type, "data": data},
            sort_keys=True,
            separators=(",", ":"),
        )
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        self._next_seq += 1
        return seq

    def append_decision(self, decision: DecisionEvent) -> int:
        return self.append("decision", decision.to_dict())

    def append_lifecycle(self, event: LifecycleEvent) -> int:
        return self.append(
            "lifecycle", {"diff_id": event.diff_id, "kind": event.kind.value, "at": event.at}
        )


def read_log(path: str | Path) -> list[tuple[int, str, dict[str, Any]]]:
    """All complete records in order. Sequence gaps raise; a partial tail is ignored."""
    records: list[tuple[int, str, dict[str, Any]]] = []
    raw = Path(path).read_bytes().decode("utf-8") if Path(path).exists() else ""
    # The writer terminates every record with a newline, so the element after
    # the final newline (possibly empty) is never a complete record.
    complete = raw.split("\n")[:-1]
    for lineno, line in enumerate(complete, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append((int(obj["seq"]), str(obj["type"]), dict(obj["data"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise GapInLog(f"line {lineno}: unreadable record")
    expected = 0
    for seq, _, _ in records:
        if seq != expected:
            raise GapInLog(f"expected seq {expected}, found {seq}")
        expected += 1
    return records


@dataclass
class ReplayState:
    decisions: list[DecisionEvent] = field(default_factory=list)
    lifecycle: list[LifecycleEvent] = field(default_factory=list)
    ledgers: dict[str, RunbookLedger] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        outcomes: dict[str, int] = {}
        for decision in self.decisions:
            outcomes[decision.outcome] = outcomes.get(decision.outcome, 0) + 1
        return {
            "decisions": len(self.decisions),
            "lifecycle_events": len(self.lifecycle),
            "outcomes": dict(sorted(outcomes.items())),
            "ledgers": {
                name: len(ledger.entries) for name, ledger in sorted(self.ledgers.items())
            },
        }


def replay(path: str | Path) -> ReplayState:
    """Rebuild decisions, lifecycle events, and runbook ledgers from the log.

    Deterministic and idempotent: replaying the same log twice yields equal
    states.
    """
    state = ReplayState()
    runbook_of: dict[str, str] = {}
    lifecycle_raw: list[LifecycleEvent] = []

    for _, record_type, data in read_log(path):
        if record_type == "decision":
            decision = DecisionEvent.from_dict(data)
            state.decisions.append(decision)
            if decision.source_kind == SourceType.RACER_RUNBOOK.value:
                runbook_of[decision.diff_id] = decision.source_name
        elif record_type == "lifecycle":
            lifecycle_raw.append(
                LifecycleEvent(
                    diff_id=str(data["diff_id"]),
                    kind=EventKind(data["kind"]),
                    at=int(data["at"]),
                )
            )

    state.lifecycle = lifecycle_raw
    for event in lifecycle_raw:
        if event.kind not in LEDGER_EVENT_KINDS:
            continue
        runbook = runbook_of.get(event.diff_id)
        if runbook is None:
            continue
        ledger = state.ledgers.setdefault(runbook, RunbookLedger(runbook))
        ledger.record_outcome(event)
    return state


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows
