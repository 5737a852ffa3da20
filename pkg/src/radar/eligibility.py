"""Eligibility classification: bot-source routing, runbook ledgers, human checks.

Bot diffs route by automation source: deterministic codemods with an approved
codemod_id take Blanket AutoAccept, AI codemods take per-diff ACE at the org's
bot threshold, and runbook diffs must clear per-runbook history checks over a
lookback window plus daily caps and denylists. Human diffs clear author, scope,
state, and content constraints before the verification pipeline.

Every failed check is reported: ``reasons`` carries all violated criteria, not
just the first. Reason codes are a closed enum serialized as stable strings
(documented in docs/reasons.md) to keep telemetry queryable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .diffs import (
    Diff,
    EventKind,
    LifecycleEvent,
    Role,
    SECONDS_PER_DAY,
    SourceType,
    day_of,
)
from .errors import RadarError
from .policy import BYPASS, Bypass, ContentBlocklists, PolicySet, PxThreshold, RunbookPolicy, resolve_threshold


class ReasonCode(str, Enum):
    # Bot routing
    SOURCE_NOT_PERMITTED = "SOURCE_NOT_PERMITTED"
    CODEMOD_NOT_APPROVED = "CODEMOD_NOT_APPROVED"
    NO_HISTORY = "NO_HISTORY"
    KEYWORD_DENYLIST = "KEYWORD_DENYLIST"
    DENYLISTED = "DENYLISTED"
    PI_IN_WINDOW = "PI_IN_WINDOW"
    REVERT_RATE = "REVERT_RATE"
    REJECTION_RATE = "REJECTION_RATE"
    MIN_LANDED = "MIN_LANDED"
    DAILY_CAP = "DAILY_CAP"
    # Human author
    ROLE = "ROLE"
    INTERN_TENURE = "INTERN_TENURE"
    NO_ONCALL = "NO_ONCALL"
    # Scope
    OPEN_SOURCE = "OPEN_SOURCE"
    SOX_SCOPE = "SOX_SCOPE"
    ADDITIONAL_REVIEW = "ADDITIONAL_REVIEW"
    # Diff state
    WIP = "WIP"
    RFC = "RFC"
    REJECTED = "REJECTED"
    NOT_LATEST = "NOT_LATEST"
    CI_STATE = "CI_STATE"
    CODE_FREEZE = "CODE_FREEZE"
    # Content
    PHRASE = "PHRASE"
    PATH_SUFFIX = "PATH_SUFFIX"
    PATH_PREFIX = "PATH_PREFIX"
    # Pipeline stages
    PAUSED = "PAUSED"
    RADAR_INACTIVE = "RADAR_INACTIVE"
    DEFERRED_REVIEW_DISABLED = "DEFERRED_REVIEW_DISABLED"
    DRS_COLD_START = "DRS_COLD_START"
    DRS_ABOVE_THRESHOLD = "DRS_ABOVE_THRESHOLD"
    AGENT_REJECTED = "AGENT_REJECTED"
    # Approval stage
    APPROVAL_DRS = "APPROVAL_DRS"
    APPROVAL_CONFIDENCE = "APPROVAL_CONFIDENCE"
    APPROVAL_EFFORT = "APPROVAL_EFFORT"


class Route(str, Enum):
    BLANKET_AUTOACCEPT = "BLANKET_AUTOACCEPT"
    ACE = "ACE"
    HUMAN_PIPELINE = "HUMAN_PIPELINE"
    BLOCKED = "BLOCKED"


@dataclass(frozen=True, slots=True)
class EligibilityDecision:
    eligible: bool
    route: Route
    reasons: tuple[ReasonCode, ...] = ()
    # Resolved DRS gate for the ACE route: a PxThreshold or BYPASS.
    threshold: PxThreshold | Bypass | None = None

    def __post_init__(self):
        if not self.eligible and not self.reasons:
            raise ValueError("ineligible decision must carry reasons")
        if self.route is Route.BLOCKED and self.eligible:
            raise ValueError("BLOCKED route implies eligible=False")


class OutOfOrderEvent(RadarError):
    pass


class LedgerOutcome(str, Enum):
    LANDED = "LANDED"
    REVERTED = "REVERTED"
    PI = "PI"
    HUMAN_REJECTED = "HUMAN_REJECTED"


_EVENT_TO_OUTCOME = {
    EventKind.LANDED: LedgerOutcome.LANDED,
    EventKind.REVERTED: LedgerOutcome.REVERTED,
    EventKind.PI_ATTRIBUTED: LedgerOutcome.PI,
    EventKind.HUMAN_REJECTED: LedgerOutcome.HUMAN_REJECTED,
}


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    at: int
    outcome: LedgerOutcome


@dataclass(frozen=True, slots=True)
class WindowCounts:
    landed: int = 0
    reverted: int = 0
    pis: int = 0
    rejected: int = 0


class RunbookLedger:
    """Event-sourced outcome history for one runbook.

    Entries are append-only and ordered by timestamp; the per-day landed
    counters are an incremental view that is always re-derivable by re-scanning
    the entries.
    """

    def __init__(self, runbook_name: str, entries: Iterable[LedgerEntry] = ()):
        self.runbook_name = runbook_name
        self.entries: list[LedgerEntry] = []
        self.landed_by_day: dict[int, int] = {}
        for entry in entries:
            self.append(entry)

    def append(self, entry: LedgerEntry) -> None:
        if self.entries and entry.at < self.entries[-1].at:
            raise OutOfOrderEvent(
                f"{self.runbook_name}: entry at {entry.at} precedes last entry at {self.entries[-1].at}"
            )
        self.entries.append(entry)
        if entry.outcome is LedgerOutcome.LANDED:
            day = day_of(entry.at)
            self.landed_by_day[day] = self.landed_by_day.get(day, 0) + 1

    def record_outcome(self, event: LifecycleEvent) -> "RunbookLedger":
        """Append a lifecycle outcome (LANDED/REVERTED/PI_ATTRIBUTED/HUMAN_REJECTED)."""
        outcome = _EVENT_TO_OUTCOME.get(event.kind)
        if outcome is None:
            raise ValueError(f"{event.kind.value} is not a ledger outcome")
        self.append(LedgerEntry(at=event.at, outcome=outcome))
        return self

    def landed_on(self, day: int) -> int:
        return self.landed_by_day.get(day, 0)

    def counts_in_window(self, now: int, lookback_days: int) -> WindowCounts:
        """Outcome counts over [now - lookback_days, now] (inclusive both ends)."""
        start = now - lookback_days * SECONDS_PER_DAY
        tallies = {outcome: 0 for outcome in LedgerOutcome}
        for entry in self.entries:
            if start <= entry.at <= now:
                tallies[entry.outcome] += 1
        return WindowCounts(
            landed=tallies[LedgerOutcome.LANDED],
            reverted=tallies[LedgerOutcome.REVERTED],
            pis=tallies[LedgerOutcome.PI],
            rejected=tallies[LedgerOutcome.HUMAN_REJECTED],
        )

    def to_dicts(self) -> list[dict]:
        return [
            {"runbook": self.runbook_name, "at": e.at, "outcome": e.outcome.value}
            for e in self.entries
        ]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RunbookLedger)
            and self.runbook_name == other.runbook_name
            and self.entries == other.entries
        )


def record_outcome(ledger: RunbookLedger, event: LifecycleEvent) -> RunbookLedger:
    return ledger.record_outcome(event)


def runbook_eligible(
    ledger: RunbookLedger,
    rp: RunbookPolicy,
    now: int,
    *,
    admitted_today: int | None = None,
) -> tuple[bool, list[ReasonCode]]:
    """Per-runbook history checks over the lookback window; all failures reported.

    Requires zero PIs, revert rate (reverts/landed) and human rejection rate
    (rejections/(landed+rejections)) under the configured maxima, the minimum
    landed count, no denylist, and headroom under the daily cap. The cap
    compares against today's landed count, or ``admitted_today`` when the
    caller tracks in-flight admissions (see LedgerKeeper).
    """
    reasons: list[ReasonCode] = []
    counts = ledger.counts_in_window(now, rp.lookback_days)

    if counts.pis > 0:
        reasons.append(ReasonCode.PI_IN_WINDOW)
    if counts.landed > 0:
        if counts.reverted / counts.landed > rp.max_revert_rate:
            reasons.append(ReasonCode.REVERT_RATE)
    elif counts.reverted > 0:
        reasons.append(ReasonCode.REVERT_RATE)
    decided = counts.landed + counts.rejected
    if decided > 0 and counts.rejected / decided > rp.max_rejection_rate:
        reasons.append(ReasonCode.REJECTION_RATE)
    if counts.landed < rp.min_landed_for_eligibility:
        reasons.append(ReasonCode.MIN_LANDED)
    if rp.denylisted:
        reasons.append(ReasonCode.DENYLISTED)
    today_count = admitted_today if admitted_today is not None else ledger.landed_on(day_of(now))
    if today_count >= rp.daily_cap:
        reasons.append(ReasonCode.DAILY_CAP)

    return (not reasons, reasons)


def route_bot(
    diff: Diff,
    policy: PolicySet,
    ledger: RunbookLedger | None,
    now: int,
    *,
    admitted_today: int | None = None,
) -> EligibilityDecision:
    """Route a bot diff through the source-type eligibility tree."""
    source = diff.source
    org = policy.org_policy(diff.org)

    if source.kind not in org.permitted_sources:
        return EligibilityDecision(False, Route.BLOCKED, (ReasonCode.SOURCE_NOT_PERMITTED,))

    if source.kind is SourceType.DETERMINISTIC_CODEMOD:
        if source.name in policy.approved_codemods:
            return EligibilityDecision(True, Route.BLANKET_AUTOACCEPT)
        return EligibilityDecision(False, Route.BLOCKED, (ReasonCode.CODEMOD_NOT_APPROVED,))

    threshold = resolve_threshold(policy, diff.org, source)

    if source.kind is SourceType.AI_CODEMOD:
        return EligibilityDecision(True, Route.ACE, threshold=threshold)

    # RACER runbook: keyword exclusion, then the ledger-backed history checks.
    reasons: list[ReasonCode] = []
    if any(
        keyword in source.name for keyword in policy.blocklists.runbook_keyword_denylist
    ):
        reasons.append(ReasonCode.KEYWORD_DENYLIST)
    if ledger is None:
        reasons.append(ReasonCode.NO_HISTORY)
        return EligibilityDecision(False, Route.BLOCKED, tuple(reasons))
    ok, history_reasons = runbook_eligible(
        ledger, policy.runbook_policy(source.name), now, admitted_today=admitted_today
    )
    reasons.extend(history_reasons)
    if reasons:
        return EligibilityDecision(False, Route.BLOCKED, tuple(reasons))
    return EligibilityDecision(True, Route.ACE, threshold=threshold)


ELIGIBLE_ROLES = frozenset(
    {Role.SWE, Role.SWE_MANAGER, Role.DATA_ENGINEER, Role.DATA_SCIENTIST}
)
MIN_DIFFS_PAST_YEAR = 10  # "more than 10" -> strictly greater
MIN_INTERN_EMPLOYMENT_DAYS = 60


def human_eligible(diff: Diff, policy: PolicySet) -> tuple[bool, list[ReasonCode]]:
    """Author, scope, and state constraints for the human verification pipeline."""
    reasons: list[ReasonCode] = []
    author = diff.author

    role_ok = author.role in ELIGIBLE_ROLES or author.diffs_committed_past_year > MIN_DIFFS_PAST_YEAR
    if not role_ok:
        reasons.append(ReasonCode.ROLE)
    if author.role is Role.INTERN_SWE and author.employment_days < MIN_INTERN_EMPLOYMENT_DAYS:
        reasons.append(ReasonCode.INTERN_TENURE)
    if not author.has_oncall:
        reasons.append(ReasonCode.NO_ONCALL)

    if diff.scope.is_open_source:
        reasons.append(ReasonCode.OPEN_SOURCE)
    if diff.scope.is_sox:
        reasons.append(ReasonCode.SOX_SCOPE)
    if diff.scope.requires_additional_review:
        reasons.append(ReasonCode.ADDITIONAL_REVIEW)

    state = diff.state
    if state.is_wip:
        reasons.append(ReasonCode.WIP)
    if state.is_rfc:
        reasons.append(ReasonCode.RFC)
    if state.was_rejected:
        reasons.append(ReasonCode.REJECTED)
    if not state.is_latest_published:
        reasons.append(ReasonCode.NOT_LATEST)
    if state.in_code_freeze:
        reasons.append(ReasonCode.CODE_FREEZE)
    if state.ci_state not in policy.allowed_ci_states:
        reasons.append(ReasonCode.CI_STATE)

    return (not reasons, reasons)


def content_checks(diff: Diff, bl: ContentBlocklists) -> tuple[bool, list[ReasonCode]]:
    """Phrase and path blocklist scans. Phrases are case-sensitive substrings."""
    reasons: list[ReasonCode] = []
    texts = [diff.content_text] + [h for c in diff.changes for h in c.hunk_texts]
    if any(phrase in text for phrase in bl.phrase_blocklist for text in texts):
        reasons.append(ReasonCode.PHRASE)
    paths = [c.path for c in diff.changes]
    if any(path.endswith(suffix) for suffix in bl.path_suffix_blocklist for path in paths):
        reasons.append(ReasonCode.PATH_SUFFIX)
    if any(path.startswith(prefix) for prefix in bl.path_prefix_blocklist for path in paths):
        reasons.append(ReasonCode.PATH_PREFIX)
    return (not reasons, reasons)


class LedgerKeeper:
    """Serialized owner of runbook ledgers and the atomic daily-cap admission.

    Cap accounting is admission-based: ``try_admit`` counts diffs entering ACE
    evaluation per UTC day (seeded from the ledger's landed count the first
    time a day is touched), so in-flight diffs that have not landed yet still
    hold their slot. Granted slots are not released if the diff later fails
    another gate.
    """

    def __init__(self):
        self._ledgers: dict[str, RunbookLedger] = {}
        self._admitted: dict[tuple[str, int], int] = {}
        self._lock = threading.RLock()

    def add_ledger(self, ledger: RunbookLedger) -> None:
        with self._lock:
            self._ledgers[ledger.runbook_name] = ledger

    def ledger(self, runbook_name: str) -> RunbookLedger | None:
        with self._lock:
            return self._ledgers.get(runbook_name)

    def ensure_ledger(self, runbook_name: str) -> RunbookLedger:
        with self._lock:
            if runbook_name not in self._ledgers:
                self._ledgers[runbook_name] = RunbookLedger(runbook_name)
            return self._ledgers[runbook_name]

    def ledgers(self) -> Mapping[str, RunbookLedger]:
        with self._lock:
            return dict(self._ledgers)

    def admitted_on(self, runbook_name: str, day: int) -> int:
        with self._lock:
            return self._admitted.get((runbook_name, day), self._seed(runbook_name, day))

    def _seed(self, runbook_name: str, day: int) -> int:
        ledger = self._ledgers.get(runbook_name)
        return ledger.landed_on(day) if ledger else 0

    def try_admit(self, runbook_name: str, day: int, daily_cap: int) -> bool:
        """Atomically claim a cap slot for (runbook, UTC day); False when full."""
        with self._lock:
            key = (runbook_name, day)
            current = self._admitted.get(key)
            if current is None:
                current = self._seed(runbook_name, day)
            if current >= daily_cap:
                return False
            self._admitted[key] = current + 1
            return True

    def record(self, runbook_name: str, event: LifecycleEvent) -> None:
        with self._lock:
            self.ensure_ledger(runbook_name).record_outcome(event)
