"""The review agent: safe/risk signal classification and the auto-accept rule.

A diff is auto-accepted only when every change carries at least one safe
signal, no risk signal was detected anywhere, the review-effort score is at
most 3, and the backend's confidence is at least 8 out of 10. Every error path
fails closed to REJECT_TO_HUMAN.

Two backends ship: a deterministic rule-based backend that matches documented
textual patterns, and a client for an external review service speaking a
line-delimited JSON protocol (see docs/schemas.md). Hunk texts are expected in
unified-diff style: lines prefixed ``+`` (added), ``-`` (removed), anything
else is context.
"""

from __future__ import annotations

import json
import re
import socket
import threading
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol, Sequence

from .diffs import Diff, diff_size
from .errors import RadarError
from .policy import AcrConfig


class SafeSignal(str, Enum):
    REFACTOR_NO_BEHAVIOR_CHANGE = "REFACTOR_NO_BEHAVIOR_CHANGE"
    DEAD_CODE_REMOVAL = "DEAD_CODE_REMOVAL"
    DEFENSIVE_PROGRAMMING = "DEFENSIVE_PROGRAMMING"
    LOGGING_ADDITION = "LOGGING_ADDITION"
    PURE_FORMATTING = "PURE_FORMATTING"
    DOC_COMMENT_UPDATE = "DOC_COMMENT_UPDATE"
    IMPORT_HYGIENE = "IMPORT_HYGIENE"
    TEST_ADDITION = "TEST_ADDITION"
    STATIC_RESOURCE_UPDATE = "STATIC_RESOURCE_UPDATE"


class RiskKind(str, Enum):
    HIGH_REVIEW_EFFORT = "HIGH_REVIEW_EFFORT"
    SUBSTANTIAL_STRUCTURAL_CHANGE = "SUBSTANTIAL_STRUCTURAL_CHANGE"
    BUG_OR_LOGIC_ERROR = "BUG_OR_LOGIC_ERROR"
    PERFORMANCE_RISK = "PERFORMANCE_RISK"
    SECURITY_VULNERABILITY = "SECURITY_VULNERABILITY"


@dataclass(frozen=True, slots=True)
class RiskSignal:
    kind: RiskKind
    detail: str = ""


class Decision(str, Enum):
    AUTO_ACCEPT = "AUTO_ACCEPT"
    REJECT_TO_HUMAN = "REJECT_TO_HUMAN"


ChangeSignals = tuple[frozenset[SafeSignal], frozenset[RiskSignal]]


@dataclass(frozen=True, slots=True)
class ReviewVerdict:
    """Per-change classifications plus the diff-level decision.

    Invariant: decision == AUTO_ACCEPT implies confidence >= 8, every change
    has at least one safe signal, the union of risk signals (per-change and
    diff-level) is empty, and effort_score <= 3.
    """

    per_change: tuple[ChangeSignals, ...]
    confidence: int
    effort_score: int
    decision: Decision
    rationale: str
    diff_signals: frozenset[RiskSignal] = frozenset()


class BackendUnavailable(RadarError):
    pass


class BackendTimeout(RadarError):
    pass


@dataclass(frozen=True, slots=True)
class BackendResult:
    per_change: tuple[ChangeSignals, ...]
    confidence: int


class ReviewBackend(Protocol):
    def classify_diff(self, diff: Diff) -> BackendResult: ...


# --- textual pattern rules ----------------------------------------------------

# Default per-signal pattern sets; overridable through [acr].patterns.
DEFAULT_PATTERNS: dict[str, tuple[str, ...]] = {
    "secret": (
        r"(?i)\b(aws_secret[a-z_]*|api[_-]?key|secret[_-]?key|private[_-]?key|"
        r"auth[_-]?token|password|passwd)\b\s*[:=]",
        r"-----BEGIN (RSA |EC |OPENSSH )?PRIVATE KEY-----",
    ),
    "sql_injection": (
        r"(?i)\bexecute\s*\(.*(\+\s*\w|%\s*\(|\.format\(|f['\"])",
        r"(?i)['\"]\s*\+\s*\w+.*\b(select|insert|update|delete)\b",
    ),
    "auth_bypass": (
        r"(?i)\b(verify|check|validate)[a-z_]*\s*=\s*(false|none|nil|null)\b",
        r"(?i)\bskip[a-z_]*auth",
    ),
    "bug_marker": (r"(?i)\b(fixme|xxx|broken|do not land)\b",),
    "performance": (
        r"(?i)\btime\.sleep\s*\(",
        r"(?i)\bselect\s+\*\s+from\b",
        r"(?i)\bbusy[_-]?wait\b",
    ),
    "logging": (
        r"^\s*(log(ger|ging)?\.[a-z_]+\s*\(|print\s*\(|console\.(log|warn|error)\s*\(|"
        r"fprintf\s*\(\s*stderr)",
    ),
    "import": (
        r"^\s*(import\s|from\s+\S+\s+import\s|#include\s|use\s+\S+;|require\s*\()",
    ),
    "comment": (r"^\s*(#|//|/\*|\*\s|\*/|'''|\"\"\")",),
    "defensive": (
        r"^\s*(assert\b|raise\b|try:|except\b|catch\s*\(|if\s+.*\b(is\s+(not\s+)?None|"
        r"==\s*None|!=\s*None|is_empty|isempty)\b)",
    ),
    "structural": (r"^\s*(def\s|class\s|function\s|fn\s|interface\s|struct\s)",),
    "test_path": (r"(^|/)tests?(/|_)|_test\.|\.test\.|(^|/)test_",),
}

STATIC_RESOURCE_SUFFIXES = (
    ".png", ".jpg", ".jpeg", ".gif", ".svg", ".ico",
    ".csv", ".txt", ".md", ".rst", ".lock",
)

# Added + removed definition lines at or above this count flag a structural change.
STRUCTURAL_DEF_THRESHOLD = 6


def _compile(patterns: Iterable[str]) -> list[re.Pattern[str]]:
    return [re.compile(p) for p in patterns]


class _Rules:
    def __init__(self, overrides: dict | None = None):
        merged = dict(DEFAULT_PATTERNS)
        merged.update({k: tuple(v) for k, v in (overrides or {}).items()})
        self.by_name = {name: _compile(pats) for name, pats in merged.items()}

    def matches(self, name: str, line: str) -> bool:
        return any(p.search(line) for p in self.by_name[name])


_DEFAULT_RULES = _Rules()


def _split_hunks(hunk_texts: Sequence[str]) -> tuple[list[str], list[str]]:
    added, removed = [], []
    for hunk in hunk_texts:
        for line in hunk.splitlines():
            if line.startswith("+"):
                added.append(line[1:])
            elif line.startswith("-"):
                removed.append(line[1:])
    return added, removed


def _non_ws(lines: Iterable[str]) -> str:
    return "".join("".join(line.split()) for line in lines)


def classify_change(
    hunk_texts: Sequence[str], path: str, rules: _Rules | None = None
) -> tuple[set[SafeSignal], set[RiskSignal]]:
    """Classify one change against the safe/risk signal taxonomy.

    Pure textual matching; an unclassifiable change returns both sets empty
    (which downstream disqualifies the diff from auto-acceptance). Risk
    patterns are scanned over added lines only: removing risky code is fine.
    """
    rules = rules or _DEFAULT_RULES
    added, removed = _split_hunks(hunk_texts)
    safe: set[SafeSignal] = set()
    risk: set[RiskSignal] = set()

    for line in added:
        for name, kind in (
            ("secret", RiskKind.SECURITY_VULNERABILITY),
            ("sql_injection", RiskKind.SECURITY_VULNERABILITY),
            ("auth_bypass", RiskKind.SECURITY_VULNERABILITY),
            ("bug_marker", RiskKind.BUG_OR_LOGIC_ERROR),
            ("performance", RiskKind.PERFORMANCE_RISK),
        ):
            if rules.matches(name, line):
                risk.add(RiskSignal(kind, detail=f"{name}: {line.strip()[:80]}"))

    def_lines = sum(
        1 for line in added + removed if rules.matches("structural", line)
    )
    if def_lines >= STRUCTURAL_DEF_THRESHOLD:
        risk.add(
            RiskSignal(
                RiskKind.SUBSTANTIAL_STRUCTURAL_CHANGE,
                detail=f"{def_lines} definition lines changed",
            )
        )

    if removed and not added:
        safe.add(SafeSignal.DEAD_CODE_REMOVAL)
    elif _non_ws(added) == _non_ws(removed) and (added or removed):
        safe.add(SafeSignal.PURE_FORMATTING)
    elif added and removed and sorted(l.strip() for l in added) == sorted(
        l.strip() for l in removed
    ):
        safe.add(SafeSignal.REFACTOR_NO_BEHAVIOR_CHANGE)
    else:
        content = [l for l in added if l.strip()]
        if content:
            is_comment = [rules.matches("comment", l) for l in content]
            if all(is_comment):
                safe.add(SafeSignal.DOC_COMMENT_UPDATE)
            else:
                # Comment lines ride along with whichever category the code matches.
                for name, signal in (
                    ("logging", SafeSignal.LOGGING_ADDITION),
                    ("import", SafeSignal.IMPORT_HYGIENE),
                    ("defensive", SafeSignal.DEFENSIVE_PROGRAMMING),
                ):
                    hits = [rules.matches(name, l) for l in content]
                    if any(hits) and all(
                        h or c for h, c in zip(hits, is_comment)
                    ):
                        safe.add(signal)

    if added and rules.matches("test_path", path):
        safe.add(SafeSignal.TEST_ADDITION)
    if added and path.endswith(STATIC_RESOURCE_SUFFIXES):
        safe.add(SafeSignal.STATIC_RESOURCE_UPDATE)

    return safe, risk


def _bucket(value: int, breakpoints: Sequence[int]) -> int:
    for i, bp in enumerate(breakpoints):
        if value <= bp:
            return i + 1
    return len(breakpoints) + 1


def effort_score(diff: Diff, config: AcrConfig | None = None) -> int:
    """Review-effort bucket in 1..5 from diff size and file count.

    Defaults: <=10 lines -> 1, <=50 -> 2, <=200 -> 3, <=1000 -> 4, else 5;
    file count buckets at (2, 5, 10, 25). The effort is the max of the two.
    """
    cfg = config or AcrConfig()
    return max(
        _bucket(diff_size(diff), cfg.effort_size_breakpoints),
        _bucket(len(diff.changes), cfg.effort_file_breakpoints),
    )


HIGH_EFFORT_THRESHOLD = 4
MIN_ACCEPT_CONFIDENCE = 8


def decide(
    per_change: Sequence[ChangeSignals], confidence: int, effort: int
) -> Decision:
    """The pure accept/reject rule over classifications, confidence, and effort.

    REJECT_TO_HUMAN when any risk signal is present, any change lacks a safe
    signal, effort >= 4 (high calculated review effort disqualifies), or
    confidence < 8. No classifications at all is no evidence of safety.
    """
    if not per_change:
        return Decision.REJECT_TO_HUMAN
    if any(risk for _, risk in per_change):
        return Decision.REJECT_TO_HUMAN
    if any(not safe for safe, _ in per_change):
        return Decision.REJECT_TO_HUMAN
    if effort >= HIGH_EFFORT_THRESHOLD:
        return Decision.REJECT_TO_HUMAN
    if confidence < MIN_ACCEPT_CONFIDENCE:
        return Decision.REJECT_TO_HUMAN
    return Decision.AUTO_ACCEPT


def _freeze(per_change: Sequence[tuple[Iterable[SafeSignal], Iterable[RiskSignal]]]):
    return tuple((frozenset(s), frozenset(r)) for s, r in per_change)


class RuleBasedBackend:
    """Deterministic pattern-matching backend. Identical diff text, identical verdict."""

    def __init__(self, config: AcrConfig | None = None):
        self.config = config or AcrConfig()
        self._rules = _Rules(dict(self.config.patterns))

    def classify_diff(self, diff: Diff) -> BackendResult:
        per_change = _freeze(
            classify_change(c.hunk_texts, c.path, self._rules) for c in diff.changes
        )
        penalty = 0
        if any(len(safe) > 1 for safe, _ in per_change):
            penalty += self.config.mixed_safe_kinds_penalty
        if len(diff.changes) > self.config.many_files_threshold:
            penalty += self.config.many_files_penalty
        return BackendResult(per_change=per_change, confidence=max(0, 10 - penalty))


class ExternalBackend:
    """Client for an external review service over line-delimited JSON on TCP.

    Request: one JSON line {"diff_id", "org", "changes": [{"path",
    "hunk_texts"}], "metadata": {...}}. Response: one JSON line {"per_change":
    [{"safe": [...], "risk": [{"kind", "detail"}]}], "confidence": int}.
    Malformed responses, timeouts, and connection errors raise, and review()
    fails closed.
    """

    def __init__(self, endpoint: str, timeout_ms: int = 2000, max_in_flight: int = 8):
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise BackendUnavailable(f"bad endpoint {endpoint!r}, expected host:port")
        self._addr = (host, int(port))
        self._timeout = timeout_ms / 1000.0
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def classify_diff(self, diff: Diff) -> BackendResult:
        request = {
            "diff_id": diff.id,
            "org": diff.org,
            "changes": [
                {"path": c.path, "hunk_texts": list(c.hunk_texts)} for c in diff.changes
            ],
            "metadata": {"source_kind": diff.source.kind.value, "size": diff_size(diff)},
        }
        with self._slots:
            try:
                with socket.create_connection(self._addr, timeout=self._timeout) as sock:
                    sock.sendall(json.dumps(request).encode("utf-8") + b"\n")
                    raw = self._read_line(sock)
            except socket.timeout as exc:
                raise BackendTimeout(f"review backend timed out: {exc}")
            except OSError as exc:
                raise BackendUnavailable(f"review backend unreachable: {exc}")
        return self._parse_response(raw, expected_changes=len(diff.changes))

    def _read_line(self, sock: socket.socket) -> bytes:
        chunks = []
        while True:
            chunk = sock.recv(4096)
            if not chunk:
                break
            chunks.append(chunk)
            if b"\n" in chunk:
                break
        return b"".join(chunks)

    def _parse_response(self, raw: bytes, expected_changes: int) -> BackendResult:
        try:
            payload = json.loads(raw.decode("utf-8").strip())
            per_change = []
            for entry in payload["per_change"]:
                safe = frozenset(SafeSignal(s) for s in entry.get("safe", []))
                risk = frozenset(
                    RiskSignal(RiskKind(r["kind"]), str(r.get("detail", "")))
                    for r in entry.get("risk", [])
                )
                per_change.append((safe, risk))
            confidence = int(payload["confidence"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise BackendUnavailable(f"malformed backend response: {exc}")
        if len(per_change) != expected_changes or not 0 <= confidence <= 10:
            raise BackendUnavailable("backend response does not match the diff")
        return BackendResult(per_change=tuple(per_change), confidence=confidence)


def make_backend(config: AcrConfig) -> ReviewBackend:
    if config.backend == "external":
        return ExternalBackend(config.endpoint, config.timeout_ms, config.max_in_flight)
    return RuleBasedBackend(config)


def review(diff: Diff, backend: ReviewBackend, config: AcrConfig | None = None) -> ReviewVerdict:
    """Full review of one diff: classify, compute effort, render the decision.

    Backend failures never auto-accept: they produce REJECT_TO_HUMAN with the
    failure recorded in the rationale.
    """
    cfg = config or AcrConfig()
    effort = effort_score(diff, cfg)
    try:
        result = backend.classify_diff(diff)
    except (BackendUnavailable, BackendTimeout) as exc:
        return ReviewVerdict(
            per_change=(),
            confidence=0,
            effort_score=effort,
            decision=Decision.REJECT_TO_HUMAN,
            rationale=f"backend failure, failing closed: {exc}",
        )

    diff_signals = frozenset(
        {RiskSignal(RiskKind.HIGH_REVIEW_EFFORT, detail=f"effort={effort}")}
        if effort >= HIGH_EFFORT_THRESHOLD
        else ()
    )
    decision = decide(result.per_change, result.confidence, effort)
    rationale = _rationale(result, effort, decision, diff_signals)
    return ReviewVerdict(
        per_change=result.per_change,
        confidence=result.confidence,
        effort_score=effort,
        decision=decision,
        rationale=rationale,
        diff_signals=diff_signals,
    )


def _rationale(
    result: BackendResult,
    effort: int,
    decision: Decision,
    diff_signals: frozenset[RiskSignal],
) -> str:
    if decision is Decision.AUTO_ACCEPT:
        kinds = Counter(
            s.value for safe, _ in result.per_change for s in safe
        )
        summary = ", ".join(f"{k}x{v}" for k, v in sorted(kinds.items()))
        return f"all changes safe ({summary}); confidence {result.confidence}/10; effort {effort}"
    problems = []
    risky = {r.kind.value for _, risk in result.per_change for r in risk}
    risky |= {r.kind.value for r in diff_signals}
    if risky:
        problems.append("risk signals: " + ", ".join(sorted(risky)))
    unclassified = sum(1 for safe, _ in result.per_change if not safe)
    if unclassified:
        problems.append(f"{unclassified} change(s) without a safe classification")
    if effort >= HIGH_EFFORT_THRESHOLD:
        problems.append(f"effort {effort} >= {HIGH_EFFORT_THRESHOLD}")
    if result.confidence < MIN_ACCEPT_CONFIDENCE:
        problems.append(f"confidence {result.confidence} < {MIN_ACCEPT_CONFIDENCE}")
    return "; ".join(problems) if problems else "rejected"
