"""Study metrics over decision events, and the statistical comparisons.

Covers windowed approve / verification-pass rates, median latencies, exact
two-sided Fisher tests on 2x2 outcome tables, rate ratios, and a
difference-in-differences estimator reported on both means and medians.

Conventions pinned here: medians average the two central order statistics for
even n; an L7 window is the trailing 7x86400 seconds from its anchor,
half-open at the old end; a diff belongs to a window iff its published
timestamp falls inside.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .diffs import SECONDS_PER_DAY
from .errors import RadarError
from .funnel import Outcome


class EmptyWindow(RadarError):
    pass


class MissingTimestamp(RadarError):
    pass


class DegenerateMargins(RadarError):
    pass


class ZeroBaseline(RadarError):
    pass


class EmptyCell(RadarError):
    pass


class MissingGroup(RadarError):
    pass


# Outcomes that count as "RADAR approved" for yield metrics.
APPROVED_OUTCOMES = frozenset(
    {
        Outcome.RADAR_LAND_SCHEDULED.value,
        Outcome.RADAR_VERIFIED_DEFERRED_REVIEW.value,
        Outcome.RADAR_APPROVED_NO_REVIEW.value,
    }
)
VERIFIED_OUTCOMES = frozenset(
    {Outcome.RADAR_VERIFIED_DEFERRED_REVIEW.value, Outcome.RADAR_APPROVED_NO_REVIEW.value}
)


@dataclass(frozen=True, slots=True)
class DecisionEvent:
    """One diff's journey through the funnel, flattened for telemetry.

    ``evaluated`` marks diffs the funnel actually saw (false before policy
    activation); ``eligible`` marks diffs that passed the eligibility stage /
    verification G1. Timestamps, when present, respect lifecycle order.
    """

    diff_id: str
    org: str
    source_kind: str
    source_name: str
    authorship: str  # HUMAN | BOT
    evaluated: bool
    eligible: bool
    outcome: str
    reasons: tuple[str, ...] = ()
    rank: float | None = None
    published: int | None = None
    review_started: int | None = None
    review_ended: int | None = None
    closed: int | None = None
    landed: int | None = None
    reverted: int | None = None
    pi: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "reasons", tuple(self.reasons))
        if self.published is not None:
            for name in ("review_started", "review_ended", "closed", "landed", "reverted", "pi"):
                value = getattr(self, name)
                if value is not None and value < self.published:
                    raise ValueError(f"{self.diff_id}: {name} precedes published")
        if (
            self.review_started is not None
            and self.review_ended is not None
            and self.review_ended < self.review_started
        ):
            raise ValueError(f"{self.diff_id}: review_ended precedes review_started")
        for name in ("reverted", "pi"):
            value = getattr(self, name)
            if value is not None and (self.landed is None or value < self.landed):
                raise ValueError(f"{self.diff_id}: {name} requires a preceding landed")

    def to_dict(self) -> dict[str, Any]:
        return {
            "diff_id": self.diff_id,
            "org": self.org,
            "source_kind": self.source_kind,
            "source_name": self.source_name,
            "authorship": self.authorship,
            "evaluated": self.evaluated,
            "eligible": self.eligible,
            "outcome": self.outcome,
            "reasons": list(self.reasons),
            "rank": self.rank,
            "published": self.published,
            "review_started": self.review_started,
            "review_ended": self.review_ended,
            "closed": self.closed,
            "landed": self.landed,
            "reverted": self.reverted,
            "pi": self.pi,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "DecisionEvent":
        return cls(
            diff_id=raw["diff_id"],
            org=raw["org"],
            source_kind=raw["source_kind"],
            source_name=raw.get("source_name", ""),
            authorship=raw["authorship"],
            evaluated=bool(raw.get("evaluated", True)),
            eligible=bool(raw.get("eligible", False)),
            outcome=raw["outcome"],
            reasons=tuple(raw.get("reasons", ())),
            rank=raw.get("rank"),
            published=raw.get("published"),
            review_started=raw.get("review_started"),
            review_ended=raw.get("review_ended"),
            closed=raw.get("closed"),
            landed=raw.get("landed"),
            reverted=raw.get("reverted"),
            pi=raw.get("pi"),
        )


@dataclass(frozen=True, slots=True)
class MetricWindow:
    """L7 (trailing week), ALL, or an explicit [t0, t1] range, anchored at query time."""

    kind: str  # "L7" | "ALL" | "RANGE"
    anchor: int | None = None
    t0: int | None = None
    t1: int | None = None

    @classmethod
    def l7(cls, anchor: int) -> "MetricWindow":
        return cls("L7", anchor=anchor)

    @classmethod
    def all(cls) -> "MetricWindow":
        return cls("ALL")

    @classmethod
    def range(cls, t0: int, t1: int) -> "MetricWindow":
        return cls("RANGE", t0=t0, t1=t1)

    def contains(self, ts: int | None) -> bool:
        if ts is None:
            return False
        if self.kind == "ALL":
            return True
        if self.kind == "L7":
            assert self.anchor is not None
            return self.anchor - 7 * SECONDS_PER_DAY < ts <= self.anchor
        assert self.t0 is not None and self.t1 is not None
        return self.t0 <= ts <= self.t1


def _in_window(events: Iterable[DecisionEvent], window: MetricWindow) -> list[DecisionEvent]:
    return [ev for ev in events if window.contains(ev.published)]


def approve_rate(events: Iterable[DecisionEvent], window: MetricWindow) -> float:
    """Fraction of eligible, RADAR-evaluated diffs in the window that were approved."""
    scoped = _in_window(events, window)
    eligible = [ev for ev in scoped if ev.evaluated and ev.eligible]
    if not eligible:
        raise EmptyWindow("no eligible-evaluated diffs in window")
    approved = sum(1 for ev in eligible if ev.outcome in APPROVED_OUTCOMES)
    return approved / len(eligible)


def verification_pass_rate(events: Iterable[DecisionEvent], window: MetricWindow) -> float:
    """Fraction of human-pipeline diffs in the window that passed verification."""
    scoped = _in_window(events, window)
    human = [ev for ev in scoped if ev.evaluated and ev.authorship == "HUMAN"]
    if not human:
        raise EmptyWindow("no evaluated human-pipeline diffs in window")
    passed = sum(1 for ev in human if ev.outcome in VERIFIED_OUTCOMES)
    return passed / len(human)


class LatencyMetric(str, Enum):
    TIME_TO_CLOSE = "TIME_TO_CLOSE"
    REVIEW_WALL_TIME = "REVIEW_WALL_TIME"


class Group(str, Enum):
    RADAR = "RADAR"
    HUMAN = "HUMAN"
    ALL = "ALL"


def in_group(event: DecisionEvent, group: Group) -> bool:
    if group is Group.ALL:
        return True
    if group is Group.RADAR:
        return event.outcome in APPROVED_OUTCOMES
    return event.outcome == Outcome.ROUTED_TO_HUMAN.value


def latency_of(event: DecisionEvent, metric: LatencyMetric) -> int:
    if metric is LatencyMetric.TIME_TO_CLOSE:
        if event.published is None or event.closed is None:
            raise MissingTimestamp(f"{event.diff_id}: needs published and closed")
        return event.closed - event.published
    if event.review_started is None or event.review_ended is None:
        raise MissingTimestamp(f"{event.diff_id}: needs review_started and review_ended")
    return event.review_ended - event.review_started


def median_latency(
    events: Iterable[DecisionEvent],
    metric: LatencyMetric,
    group: Group = Group.ALL,
    window: MetricWindow = MetricWindow.all(),
) -> float:
    """Median latency in seconds over the group; even n averages the middle two."""
    samples = [
        latency_of(ev, metric)
        for ev in _in_window(events, window)
        if in_group(ev, group)
    ]
    if not samples:
        raise EmptyWindow(f"no {group.value} diffs with {metric.value} in window")
    return float(statistics.median(samples))


# --- Fisher's exact test -------------------------------------------------------

@dataclass(frozen=True, slots=True)
class TwoByTwoTable:
    """Rows: RADAR / non-RADAR; columns: adverse / non-adverse."""

    a: int  # RADAR, adverse
    b: int  # RADAR, non-adverse
    c: int  # non-RADAR, adverse
    d: int  # non-RADAR, non-adverse

    def __post_init__(self):
        for name in "abcd":
            if getattr(self, name) < 0:
                raise ValueError(f"table cell {name} must be non-negative")


_LNFACT: list[float] = [0.0]


def _lnfact(n: int) -> float:
    # Table of ln(n!) grown on demand; exact enough for p-value work.
    while len(_LNFACT) <= n:
        _LNFACT.append(_LNFACT[-1] + math.log(len(_LNFACT)))
    return _LNFACT[n]


def _ln_comb(n: int, k: int) -> float:
    return _lnfact(n) - _lnfact(k) - _lnfact(n - k)


# Relative slack on the "probability <= observed" comparison, absorbing float
# noise so that exact ties in the hypergeometric pmf are always included.
_FISHER_REL_TOL = 1e-7


def fisher_exact_two_sided(table: TwoByTwoTable) -> float:
    """Exact two-sided p: total probability of tables no more likely than observed.

    Computed in log space over the hypergeometric distribution with the
    observed margins, so astronomically small p-values at large counts stay
    accurate.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    r1, r2 = a + b, c + d
    c1, c2 = a + c, b + d
    n = r1 + r2
    if min(r1, r2, c1, c2) <= 0:
        raise DegenerateMargins(f"margins must be positive, got rows ({r1},{r2}) cols ({c1},{c2})")

    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    ln_denom = _ln_comb(n, c1)
    ln_obs = _ln_comb(r1, a) + _ln_comb(r2, c1 - a) - ln_denom
    cutoff = ln_obs + math.log1p(_FISHER_REL_TOL)

    included = []
    for k in range(lo, hi + 1):
        ln_pk = _ln_comb(r1, k) + _ln_comb(r2, c1 - k) - ln_denom
        if ln_pk <= cutoff:
            included.append(ln_pk)
    peak = max(included)
    total = peak + math.log(math.fsum(math.exp(lp - peak) for lp in included))
    return min(1.0, math.exp(total))


def rate_ratio(table: TwoByTwoTable) -> float:
    """Adverse-rate ratio RADAR/(non-RADAR): (a/(a+b)) / (c/(c+d))."""
    r1, r2 = table.a + table.b, table.c + table.d
    if r1 == 0 or r2 == 0:
        raise DegenerateMargins("both row totals must be positive")
    if table.c == 0:
        raise ZeroBaseline("non-RADAR adverse rate is zero")
    return (table.a / r1) / (table.c / r2)


# --- difference in differences --------------------------------------------------

class DidGroup(str, Enum):
    TREATED = "TREATED"
    CONTROL = "CONTROL"


class DidPeriod(str, Enum):
    BEFORE = "BEFORE"
    AFTER = "AFTER"


@dataclass(frozen=True, slots=True)
class DidSample:
    group: DidGroup
    period: DidPeriod
    value: float


@dataclass(frozen=True, slots=True)
class DidResult:
    mean_did: float
    median_did: float
    cell_sizes: Mapping[tuple[str, str], int] = field(default_factory=dict)


def did_estimate(samples: Iterable[DidSample]) -> DidResult:
    """(treated after - before) minus (control after - before), on means and medians.

    The estimator is reported both ways because neither is canonical; callers
    pick per context.
    """
    cells: dict[tuple[DidGroup, DidPeriod], list[float]] = {
        (g, p): [] for g in DidGroup for p in DidPeriod
    }
    for sample in samples:
        cells[(sample.group, sample.period)].append(sample.value)
    for (g, p), values in cells.items():
        if not values:
            raise EmptyCell(f"no samples in cell ({g.value}, {p.value})")

    def delta(stat) -> float:
        return (
            stat(cells[(DidGroup.TREATED, DidPeriod.AFTER)])
            - stat(cells[(DidGroup.TREATED, DidPeriod.BEFORE)])
        ) - (
            stat(cells[(DidGroup.CONTROL, DidPeriod.AFTER)])
            - stat(cells[(DidGroup.CONTROL, DidPeriod.BEFORE)])
        )

    return DidResult(
        mean_did=delta(statistics.fmean),
        median_did=delta(lambda xs: float(statistics.median(xs))),
        cell_sizes={(g.value, p.value): len(v) for (g, p), v in cells.items()},
    )
