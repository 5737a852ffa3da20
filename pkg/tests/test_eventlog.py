"""Append-only log: sequencing, gap detection, truncation, replay determinism."""

from __future__ import annotations

import json

import pytest

from radar.diffs import EventKind, LifecycleEvent
from radar.eventlog import EventLog, GapInLog, read_log, replay
from radar.stats import DecisionEvent

T0 = 1_704_067_200


def make_decision(diff_id, source_kind="racer_runbook", source_name="cleanup_dead_code"):
    return DecisionEvent(
        diff_id=diff_id,
        org="orgA",
        source_kind=source_kind,
        source_name=source_name,
        authorship="BOT" if source_kind != "human" else "HUMAN",
        evaluated=True,
        eligible=True,
        outcome="RADAR_LAND_SCHEDULED",
        published=T0,
    )


def write_sample_log(path):
    log = EventLog(path)
    log.append_decision(make_decision("D1"))
    log.append_decision(make_decision("D2"))
    log.append_lifecycle(LifecycleEvent("D1", EventKind.LANDED, T0 + 100))
    log.append_lifecycle(LifecycleEvent("D2", EventKind.LANDED, T0 + 200))
    log.append_lifecycle(LifecycleEvent("D2", EventKind.REVERTED, T0 + 300))
    return log


class TestEventLog:
    def test_sequence_numbers_monotone(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        seqs = [seq for seq, _, _ in read_log(path)]
        assert seqs == [0, 1, 2, 3, 4]

    def test_reopen_continues_sequence(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        log2 = EventLog(path)
        seq = log2.append_lifecycle(LifecycleEvent("D1", EventKind.CLOSED, T0 + 400))
        assert seq == 5

    def test_gap_detected(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        lines = path.read_text().splitlines()
        del lines[2]  # remove a middle record
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(GapInLog):
            read_log(path)

    def test_truncated_tail_ignored(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        raw = path.read_text()
        path.write_text(raw[: len(raw) - 17])  # cut into the last record
        records = read_log(path)
        assert [seq for seq, _, _ in records] == [0, 1, 2, 3]

    def test_append_after_crash_discards_partial_tail(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        raw = path.read_text()
        path.write_text(raw[: len(raw) - 17])  # crash mid-record
        log = EventLog(path)
        seq = log.append_lifecycle(LifecycleEvent("D9", EventKind.CLOSED, T0 + 999))
        assert seq == 4  # replaces the torn record's slot
        records = read_log(path)
        assert [s for s, _, _ in records] == [0, 1, 2, 3, 4]
        assert records[-1][2]["diff_id"] == "D9"

    def test_truncation_at_record_boundary_is_valid_prefix(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        lines = path.read_text().splitlines(keepends=True)
        for cut in range(1, len(lines) + 1):
            prefix_path = tmp_path / f"prefix_{cut}.jsonl"
            prefix_path.write_text("".join(lines[:cut]))
            records = read_log(prefix_path)
            assert [seq for seq, _, _ in records] == list(range(cut))


class TestReplay:
    def test_ledgers_rebuilt_from_lifecycle(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        state = replay(path)
        ledger = state.ledgers["cleanup_dead_code"]
        counts = ledger.counts_in_window(T0 + 300, 60)
        assert counts.landed == 2 and counts.reverted == 1

    def test_replay_idempotent(self, tmp_path):
        path = tmp_path / "events.jsonl"
        write_sample_log(path)
        first = replay(path)
        second = replay(path)
        assert first.decisions == second.decisions
        assert first.ledgers == second.ledgers
        assert first.summary() == second.summary()

    def test_empty_log_empty_state(self, tmp_path):
        path = tmp_path / "events.jsonl"
        path.write_text("")
        state = replay(path)
        assert state.decisions == [] and state.ledgers == {}

    def test_human_diffs_do_not_build_ledgers(self, tmp_path):
        path = tmp_path / "events.jsonl"
        log = EventLog(path)
        log.append_decision(make_decision("H1", source_kind="human", source_name=""))
        log.append_lifecycle(LifecycleEvent("H1", EventKind.LANDED, T0 + 10))
        assert replay(path).ledgers == {}
