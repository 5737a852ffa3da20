"""Diff data model: authorship, lifecycle events, and record validation.

Timestamps are integer Unix seconds (UTC) everywhere; latency math stays in
integer arithmetic. All types are immutable after construction and safe to
share across concurrent pipeline workers.

The ingestion format is JSON Lines with field names matching the dataclass
fields below (see docs/schemas.md); lifecycle events live in a parallel
``events.jsonl`` keyed by ``diff_id``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .errors import InputError

SECONDS_PER_DAY = 86_400


def day_of(ts: int) -> int:
    """UTC epoch day for a Unix timestamp. Day boundaries are UTC midnight."""
    return ts // SECONDS_PER_DAY


class Role(str, Enum):
    SWE = "SWE"
    SWE_MANAGER = "SWE_MANAGER"
    DATA_ENGINEER = "DATA_ENGINEER"
    DATA_SCIENTIST = "DATA_SCIENTIST"
    INTERN_SWE = "INTERN_SWE"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, raw: str) -> "Role":
        # Unknown role strings map to OTHER to keep ingestion tolerant;
        # OTHER authors fail human eligibility downstream.
        try:
            return cls(raw)
        except ValueError:
            return cls.OTHER


class CiState(str, Enum):
    PASSING = "PASSING"
    FAILING = "FAILING"
    PENDING = "PENDING"
    SKIPPED = "SKIPPED"


class SourceType(str, Enum):
    HUMAN = "human"
    DETERMINISTIC_CODEMOD = "deterministic_codemod"
    AI_CODEMOD = "ai_codemod"
    RACER_RUNBOOK = "racer_runbook"


class EventKind(str, Enum):
    PUBLISHED = "PUBLISHED"
    VERIFIED = "VERIFIED"
    APPROVED = "APPROVED"
    LANDED = "LANDED"
    HUMAN_REJECTED = "HUMAN_REJECTED"
    REVERTED = "REVERTED"
    PI_ATTRIBUTED = "PI_ATTRIBUTED"
    CLOSED = "CLOSED"
    REVIEW_STARTED = "REVIEW_STARTED"
    REVIEW_ENDED = "REVIEW_ENDED"


class Authorship(str, Enum):
    HUMAN = "HUMAN"
    BOT = "BOT"


class ValidationError(InputError):
    """A record violated a type invariant. ``field`` names the first offender."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class MissingField(ValidationError):
    def __init__(self, field_name: str):
        super().__init__(field_name, "required field is missing")


class EmptyChanges(ValidationError):
    def __init__(self):
        super().__init__("changes", "a diff entering a pipeline must have at least one change")


class NegativeCount(ValidationError):
    def __init__(self, field_name: str, value: int):
        super().__init__(field_name, f"must be non-negative, got {value}")


class BadTimestampOrder(ValidationError):
    def __init__(self, message: str):
        super().__init__("events", message)


@dataclass(frozen=True, slots=True)
class AuthorProfile:
    id: str
    role: Role
    employment_days: int
    diffs_committed_past_year: int
    has_oncall: bool

    def __post_init__(self):
        if self.employment_days < 0:
            raise NegativeCount("author.employment_days", self.employment_days)
        if self.diffs_committed_past_year < 0:
            raise NegativeCount("author.diffs_committed_past_year", self.diffs_committed_past_year)


@dataclass(frozen=True, slots=True)
class SourceKind:
    """One of human | deterministic_codemod | ai_codemod | racer_runbook.

    ``name`` carries the codemod_id or runbook_name; empty for human.
    """

    kind: SourceType
    name: str = ""

    def __post_init__(self):
        if self.kind is SourceType.RACER_RUNBOOK and not self.name:
            raise ValidationError("source.name", "runbook_name must be non-empty")

    @property
    def is_bot(self) -> bool:
        return self.kind is not SourceType.HUMAN


@dataclass(frozen=True, slots=True)
class AuthorshipClass:
    kind: Authorship
    source: SourceKind


@dataclass(frozen=True, slots=True)
class DiffStateFlags:
    is_wip: bool = False
    is_rfc: bool = False
    was_rejected: bool = False
    is_latest_published: bool = True
    in_code_freeze: bool = False
    ci_state: CiState = CiState.PASSING


@dataclass(frozen=True, slots=True)
class ScopeFlags:
    is_open_source: bool = False
    is_sox: bool = False
    requires_additional_review: bool = False


@dataclass(frozen=True, slots=True)
class ChangeUnit:
    path: str
    lines_added: int
    lines_removed: int
    hunk_texts: tuple[str, ...] = ()

    def __post_init__(self):
        if self.lines_added < 0:
            raise NegativeCount("changes.lines_added", self.lines_added)
        if self.lines_removed < 0:
            raise NegativeCount("changes.lines_removed", self.lines_removed)
        if self.lines_added + self.lines_removed < 1:
            raise ValidationError("changes", "lines_added + lines_removed must be >= 1")
        object.__setattr__(self, "hunk_texts", tuple(self.hunk_texts))


@dataclass(frozen=True, slots=True)
class LifecycleEvent:
    diff_id: str
    kind: EventKind
    at: int


@dataclass(frozen=True, slots=True)
class Diff:
    id: str
    author: AuthorProfile
    source: SourceKind
    org: str
    state: DiffStateFlags
    changes: tuple[ChangeUnit, ...]
    created_at: int
    scope: ScopeFlags = ScopeFlags()
    content_text: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValidationError("id", "must be non-empty")
        object.__setattr__(self, "changes", tuple(self.changes))
        if not self.changes:
            raise EmptyChanges()


def classify_authorship(diff: Diff) -> AuthorshipClass:
    """Partition a diff into HUMAN or BOT carrying the source variant unchanged."""
    if diff.source.kind is SourceType.HUMAN:
        return AuthorshipClass(Authorship.HUMAN, diff.source)
    return AuthorshipClass(Authorship.BOT, diff.source)


def diff_size(diff: Diff) -> int:
    """Total lines touched: sum of added + removed over all changes."""
    return sum(c.lines_added + c.lines_removed for c in diff.changes)


def _require(raw: Mapping[str, Any], key: str, prefix: str = "") -> Any:
    if key not in raw:
        raise MissingField(prefix + key)
    return raw[key]


def _parse_author(raw: Mapping[str, Any]) -> AuthorProfile:
    return AuthorProfile(
        id=str(_require(raw, "id", "author.")),
        role=Role.parse(str(_require(raw, "role", "author."))),
        employment_days=int(_require(raw, "employment_days", "author.")),
        diffs_committed_past_year=int(_require(raw, "diffs_committed_past_year", "author.")),
        has_oncall=bool(_require(raw, "has_oncall", "author.")),
    )


def _parse_source(raw: Mapping[str, Any]) -> SourceKind:
    kind_raw = str(_require(raw, "kind", "source."))
    try:
        kind = SourceType(kind_raw)
    except ValueError:
        raise ValidationError("source.kind", f"unknown source kind {kind_raw!r}")
    return SourceKind(kind=kind, name=str(raw.get("name", "")))


def _parse_state(raw: Mapping[str, Any]) -> DiffStateFlags:
    ci_raw = str(_require(raw, "ci_state", "state."))
    try:
        ci = CiState(ci_raw)
    except ValueError:
        raise ValidationError("state.ci_state", f"unknown CI state {ci_raw!r}")
    return DiffStateFlags(
        is_wip=bool(_require(raw, "is_wip", "state.")),
        is_rfc=bool(_require(raw, "is_rfc", "state.")),
        was_rejected=bool(_require(raw, "was_rejected", "state.")),
        is_latest_published=bool(_require(raw, "is_latest_published", "state.")),
        in_code_freeze=bool(_require(raw, "in_code_freeze", "state.")),
        ci_state=ci,
    )


def _parse_change(raw: Mapping[str, Any]) -> ChangeUnit:
    return ChangeUnit(
        path=str(_require(raw, "path", "changes.")),
        lines_added=int(_require(raw, "lines_added", "changes.")),
        lines_removed=int(_require(raw, "lines_removed", "changes.")),
        hunk_texts=tuple(str(h) for h in raw.get("hunk_texts", ())),
    )


def validate_events(
    created_at: int, diff_id: str, raw_events: Iterable[Mapping[str, Any]]
) -> tuple[LifecycleEvent, ...]:
    """Validate and order-check lifecycle events for one diff.

    Requirements: every event at >= created_at, events already sorted by
    timestamp, PUBLISHED first when present, and LANDED preceding REVERTED /
    PI_ATTRIBUTED when those occur.
    """
    events: list[LifecycleEvent] = []
    for raw in raw_events:
        kind_raw = str(_require(raw, "kind", "events."))
        try:
            kind = EventKind(kind_raw)
        except ValueError:
            raise ValidationError("events.kind", f"unknown event kind {kind_raw!r}")
        events.append(LifecycleEvent(diff_id=diff_id, kind=kind, at=int(_require(raw, "at", "events."))))

    last_at = None
    landed_at = None
    for i, ev in enumerate(events):
        if ev.at < created_at:
            raise BadTimestampOrder(f"{ev.kind.value} at {ev.at} precedes created_at {created_at}")
        if last_at is not None and ev.at < last_at:
            raise BadTimestampOrder(f"{ev.kind.value} at {ev.at} is out of order")
        if i > 0 and ev.kind is EventKind.PUBLISHED:
            raise BadTimestampOrder("PUBLISHED must be the first event")
        if ev.kind is EventKind.LANDED:
            landed_at = ev.at
        if ev.kind in (EventKind.REVERTED, EventKind.PI_ATTRIBUTED) and landed_at is None:
            raise BadTimestampOrder(f"{ev.kind.value} without a preceding LANDED")
        last_at = ev.at
    return tuple(events)


def validate_record(
    raw: Mapping[str, Any], events: Sequence[Mapping[str, Any]] = ()
) -> Diff:
    """Build a Diff from a parsed ingestion record, checking every invariant.

    ``events`` (or an inline ``events`` key in the record) is validated for
    timestamp ordering against ``created_at``. Raises the ValidationError
    subclass naming the first violated field.
    """
    diff_id = str(_require(raw, "id"))
    created_at = int(_require(raw, "created_at"))
    changes_raw = _require(raw, "changes")
    if not changes_raw:
        raise EmptyChanges()
    diff = Diff(
        id=diff_id,
        author=_parse_author(_require(raw, "author")),
        source=_parse_source(_require(raw, "source")),
        org=str(_require(raw, "org")),
        state=_parse_state(_require(raw, "state")),
        changes=tuple(_parse_change(c) for c in changes_raw),
        created_at=created_at,
        scope=ScopeFlags(
            is_open_source=bool(_require(_require(raw, "scope"), "is_open_source", "scope.")),
            is_sox=bool(_require(raw["scope"], "is_sox", "scope.")),
            requires_additional_review=bool(
                _require(raw["scope"], "requires_additional_review", "scope.")
            ),
        ),
        content_text=str(raw.get("content_text", "")),
    )
    inline = raw.get("events", ())
    validate_events(created_at, diff_id, list(inline) + list(events))
    return diff


def diff_to_record(diff: Diff) -> dict[str, Any]:
    """Serialize a Diff to the ingestion record shape (round-trips through validate_record)."""
    return {
        "id": diff.id,
        "author": {
            "id": diff.author.id,
            "role": diff.author.role.value,
            "employment_days": diff.author.employment_days,
            "diffs_committed_past_year": diff.author.diffs_committed_past_year,
            "has_oncall": diff.author.has_oncall,
        },
        "source": {"kind": diff.source.kind.value, "name": diff.source.name},
        "org": diff.org,
        "state": {
            "is_wip": diff.state.is_wip,
            "is_rfc": diff.state.is_rfc,
            "was_rejected": diff.state.was_rejected,
            "is_latest_published": diff.state.is_latest_published,
            "in_code_freeze": diff.state.in_code_freeze,
            "ci_state": diff.state.ci_state.value,
        },
        "changes": [
            {
                "path": c.path,
                "lines_added": c.lines_added,
                "lines_removed": c.lines_removed,
                "hunk_texts": list(c.hunk_texts),
            }
            for c in diff.changes
        ],
        "created_at": diff.created_at,
        "scope": {
            "is_open_source": diff.scope.is_open_source,
            "is_sox": diff.scope.is_sox,
            "requires_additional_review": diff.scope.requires_additional_review,
        },
        "content_text": diff.content_text,
    }
