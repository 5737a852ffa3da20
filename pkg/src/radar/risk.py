"""Diff risk scoring: features, the linear scorer, percentile calibration, gating.

The scorer is a stand-in for a proprietary ML model; the contract that matters
downstream is the percentile semantics. A raw score is calibrated against a
rolling window of recently scored diffs and expressed as a rank in [0,1]
(fraction of the calibration population with lower risk). PX gates compare
that rank against a percent threshold: rank <= X/100 passes (inclusive).

Tie handling is mid-rank: rank = (#strictly_lower + 0.5 * #equal) / n. A
window with fewer than ``min_calibration`` scores yields COLD_START, which
callers must treat as a gate failure (fail closed). A diff never calibrates
itself: the window is updated only after the current diff has been gated.
"""

from __future__ import annotations

import math
import threading
from bisect import bisect_left, bisect_right, insort
from collections import deque
from dataclasses import dataclass
from typing import Sequence

from .diffs import AuthorProfile, Diff, SourceType
from .errors import RadarError
from .policy import DEFAULT_CONFIG_PATH_PATTERNS, DrsConfig, PxThreshold

# Raw scores are plain floats (higher = riskier); percentile ranks are floats
# in [0,1]. Both are kept unwrapped for ergonomic arithmetic.
RawScore = float
PercentileRank = float


class DimensionMismatch(RadarError):
    pass


class EmptyInput(RadarError):
    pass


class ColdStart:
    """Sentinel: the calibration window is too small to rank this score."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "COLD_START"


COLD_START = ColdStart()


@dataclass(frozen=True, slots=True)
class FeatureVector:
    total_lines_changed: int
    file_count: int
    max_file_lines: int
    distinct_top_level_dirs: int
    author_diffs_past_year: int
    author_is_bot: int  # 0/1
    touches_config_path: int  # 0/1
    hour_of_day: int  # [0,23]

    def as_tuple(self) -> tuple[int, ...]:
        return (
            self.total_lines_changed,
            self.file_count,
            self.max_file_lines,
            self.distinct_top_level_dirs,
            self.author_diffs_past_year,
            self.author_is_bot,
            self.touches_config_path,
            self.hour_of_day,
        )


@dataclass(frozen=True, slots=True)
class WeightVector:
    weights: tuple[float, ...]
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


def extract_features(
    diff: Diff,
    author: AuthorProfile,
    config_path_patterns: Sequence[str] = DEFAULT_CONFIG_PATH_PATTERNS,
) -> FeatureVector:
    """Deterministic feature extraction from a diff and its author profile.

    ``touches_config_path`` is 1 iff any changed path contains one of the
    configured patterns (plain substring match).
    """
    per_file = [c.lines_added + c.lines_removed for c in diff.changes]
    touches_config = any(
        pattern in change.path for change in diff.changes for pattern in config_path_patterns
    )
    return FeatureVector(
        total_lines_changed=sum(per_file),
        file_count=len(diff.changes),
        max_file_lines=max(per_file),
        distinct_top_level_dirs=len({c.path.split("/", 1)[0] for c in diff.changes}),
        author_diffs_past_year=author.diffs_committed_past_year,
        author_is_bot=int(diff.source.kind is not SourceType.HUMAN),
        touches_config_path=int(touches_config),
        hour_of_day=(diff.created_at // 3600) % 24,
    )


def score(fv: FeatureVector, weights: WeightVector) -> RawScore:
    """Linear raw score: bias + dot(weights, features) in declared field order."""
    features = fv.as_tuple()
    if len(weights.weights) != len(features):
        raise DimensionMismatch(
            f"expected {len(features)} weights, got {len(weights.weights)}"
        )
    return weights.bias + sum(w * f for w, f in zip(weights.weights, features))


class CalibrationWindow:
    """Rolling multiset of the most recent raw scores, capped at ``capacity``.

    Reads and writes go through a single owner (see DrsEngine); this class
    itself is not thread-safe.
    """

    def __init__(self, capacity: int, scores: Sequence[float] = ()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._recency: deque[float] = deque()
        self._sorted: list[float] = []
        for s in scores:
            self.add(s)

    def __len__(self) -> int:
        return len(self._recency)

    def add(self, raw: RawScore) -> None:
        if len(self._recency) == self.capacity:
            oldest = self._recency.popleft()
            del self._sorted[bisect_left(self._sorted, oldest)]
        self._recency.append(raw)
        insort(self._sorted, raw)

    def rank_of(self, raw: RawScore) -> PercentileRank:
        """Mid-rank of ``raw`` against the current window contents."""
        n = len(self._sorted)
        if n == 0:
            raise EmptyInput("cannot rank against an empty window")
        lower = bisect_left(self._sorted, raw)
        equal = bisect_right(self._sorted, raw) - lower
        return (lower + 0.5 * equal) / n

    def scores(self) -> tuple[float, ...]:
        """Window contents in recency order (oldest first)."""
        return tuple(self._recency)


def percentile(raw: RawScore, window: CalibrationWindow, min_calibration: int = 100):
    """Calibrated rank in [0,1], or COLD_START if the window is too small."""
    if len(window) < min_calibration:
        return COLD_START
    return window.rank_of(raw)


def passes_threshold(rank: PercentileRank, threshold: PxThreshold) -> bool:
    """PX gate: true iff rank <= X/100 (boundary inclusive).

    P0 admits nothing, even a rank of exactly 0.0 (a score strictly below the
    whole calibration window), honoring the threshold's declared meaning.
    """
    if threshold.x == 0:
        return False
    return rank <= threshold.fraction


def recall_at_flag_rate(
    labeled: Sequence[tuple[float, bool]], flag_rate: float
) -> float:
    """Fraction of incident-causing diffs caught when flagging the riskiest diffs.

    Flags the ceil(flag_rate * n) highest raw scores, ties broken by stable
    input order. Returns 1.0 by convention when the corpus has no incidents.
    """
    if not labeled:
        raise EmptyInput("labeled corpus is empty")
    if not 0.0 < flag_rate <= 1.0:
        raise ValueError(f"flag_rate must be in (0,1], got {flag_rate}")
    n = len(labeled)
    # The epsilon guards against float noise in the product (e.g. 0.2*10).
    k = max(1, math.ceil(flag_rate * n - 1e-9))
    order = sorted(range(n), key=lambda i: (-labeled[i][0], i))
    flagged = set(order[:k])
    total_incidents = sum(1 for _, caused in labeled if caused)
    if total_incidents == 0:
        return 1.0
    caught = sum(1 for i in flagged if labeled[i][1])
    return caught / total_incidents


class DrsEngine:
    """Serialized owner of the scorer and its calibration window.

    ``rank_and_observe`` is the pipeline entry point: it ranks the raw score
    against the window *without* the current diff, then adds the score, all
    under one lock so concurrent evaluations see consistent snapshots.
    """

    def __init__(self, config: DrsConfig | None = None):
        self.config = config or DrsConfig()
        self.weights = WeightVector(self.config.weights, self.config.bias)
        self._window = CalibrationWindow(self.config.window_capacity)
        self._lock = threading.Lock()

    def raw_score(self, diff: Diff, author: AuthorProfile | None = None) -> RawScore:
        fv = extract_features(diff, author or diff.author, self.config.config_path_patterns)
        return score(fv, self.weights)

    def rank_only(self, raw: RawScore):
        with self._lock:
            return percentile(raw, self._window, self.config.min_calibration)

    def observe(self, raw: RawScore) -> None:
        with self._lock:
            self._window.add(raw)

    def rank_and_observe(self, raw: RawScore):
        """Rank against the pre-update window, then record the score."""
        with self._lock:
            rank = percentile(raw, self._window, self.config.min_calibration)
            self._window.add(raw)
            return rank

    def window_size(self) -> int:
        with self._lock:
            return len(self._window)
