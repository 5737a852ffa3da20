"""Synthetic diff streams and the reproducible simulation harness.

The generator draws every random quantity per diff up front (ground truth,
review latency, catch/reject/override rolls), so a simulation run consumes no
randomness of its own: identical (seed, scenario, policy) inputs produce
byte-identical results, and runs that differ only in policy see the identical
stream and per-diff rolls.

Randomness is pinned to the Mersenne Twister (MT19937) behind
``random.Random(seed)``; normals come from a Box-Muller transform over two
uniforms, exponentials from the inverse CDF, so every variate is a documented
function of the uniform stream.

The simulated clock is a virtual discrete-event clock in integer seconds.
Human reviewers are a capacity-limited FIFO queue: at most
``reviewer_capacity_per_day`` reviews may start per UTC day, so a backlog
emerges whenever arrivals outpace capacity.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

from .agent import BackendResult, ReviewBackend, RiskKind, RiskSignal, RuleBasedBackend
from .diffs import (
    AuthorProfile,
    ChangeUnit,
    Diff,
    DiffStateFlags,
    EventKind,
    LifecycleEvent,
    Role,
    SECONDS_PER_DAY,
    ScopeFlags,
    SourceKind,
    SourceType,
    day_of,
)
from .eligibility import LedgerEntry, LedgerKeeper, LedgerOutcome, ReasonCode, RunbookLedger
from .errors import InputError
from .funnel import (
    LandingStatus,
    Outcome,
    PauseControl,
    Stage,
    evaluate_diff,
    process_override,
)
from .policy import PolicySet, PxThreshold
from .risk import DrsEngine
from .stats import (
    APPROVED_OUTCOMES,
    DecisionEvent,
    DegenerateMargins,
    DidGroup,
    DidPeriod,
    DidResult,
    DidSample,
    EmptyCell,
    EmptyWindow,
    Group,
    LatencyMetric,
    MetricWindow,
    MissingGroup,
    TwoByTwoTable,
    ZeroBaseline,
    approve_rate,
    did_estimate,
    fisher_exact_two_sided,
    median_latency,
    rate_ratio,
    verification_pass_rate,
)

try:
    import tomllib as _toml
except ImportError:  # pragma: no cover
    import tomli as _toml  # type: ignore[no-redef]


class ScenarioError(InputError):
    pass


def _coerce_numbers(obj, ints: tuple[str, ...] = ()) -> None:
    """Coerce a frozen params dataclass's fields to int/float in place."""
    for name in obj.__dataclass_fields__:
        value = getattr(obj, name)
        if name in ints:
            object.__setattr__(obj, name, int(value))
        elif isinstance(value, (int, float, str)):
            object.__setattr__(obj, name, float(value))


@dataclass(frozen=True, slots=True)
class RunbookScenario:
    name: str
    weight: float = 1.0
    seeded_landed: int = 0
    seeded_days_ago: int = 30

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "seeded_landed", int(self.seeded_landed))
        object.__setattr__(self, "seeded_days_ago", int(self.seeded_days_ago))


@dataclass(frozen=True, slots=True)
class RiskModelParams:
    """Latent defect model: p(defect) = logistic(alpha + beta*norm_size + gamma*config).

    Deterministic-codemod diffs get their defect probability scaled down by
    ``det_codemod_defect_multiplier``: the transformation is vetted at the
    codemod level, which is the premise behind Blanket AutoAccept.
    """

    alpha: float = -3.5
    beta: float = 2.5
    gamma: float = 1.5
    size_log_mean: float = 3.2
    size_log_sigma: float = 1.1
    config_touch_prob: float = 0.08
    size_scale: int = 1000
    det_codemod_defect_multiplier: float = 0.15

    def __post_init__(self):
        _coerce_numbers(self, ints=("size_scale",))


@dataclass(frozen=True, slots=True)
class HumanReviewParams:
    latency_log_mean: float = 10.0
    latency_log_sigma: float = 0.8
    reviewer_capacity_per_day: int = 80
    reject_given_defect: float = 0.5
    reject_benign: float = 0.02

    def __post_init__(self):
        _coerce_numbers(self, ints=("reviewer_capacity_per_day",))


@dataclass(frozen=True, slots=True)
class OutcomeParams:
    revert_given_defect: float = 0.6
    pi_given_defect: float = 0.2

    def __post_init__(self):
        _coerce_numbers(self)


@dataclass(frozen=True, slots=True)
class AgentCatchParams:
    """Probability the review agent catches a defect, per latent defect class."""

    bug_or_logic_error: float = 0.5
    performance_risk: float = 0.4
    security_vulnerability: float = 0.9
    class_mix: tuple[tuple[str, float], ...] = (
        ("BUG_OR_LOGIC_ERROR", 0.7),
        ("PERFORMANCE_RISK", 0.2),
        ("SECURITY_VULNERABILITY", 0.1),
    )

    def __post_init__(self):
        object.__setattr__(
            self, "class_mix", tuple(sorted((str(k), float(v)) for k, v in self.class_mix))
        )
        for name in ("bug_or_logic_error", "performance_risk", "security_vulnerability"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def catch_probability(self, defect_class: str) -> float:
        return {
            "BUG_OR_LOGIC_ERROR": self.bug_or_logic_error,
            "PERFORMANCE_RISK": self.performance_risk,
            "SECURITY_VULNERABILITY": self.security_vulnerability,
        }[defect_class]


DEFAULT_SOURCE_MIX = (
    ("human", 0.5),
    ("racer_runbook", 0.3),
    ("ai_codemod", 0.15),
    ("deterministic_codemod", 0.05),
)


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    seed: int = 1
    n_diffs: int = 1000
    start_at: int = 1_704_067_200  # 2024-01-01 00:00 UTC, day-aligned
    arrivals_per_day: float = 100.0
    orgs: tuple[str, ...] = ("orgA",)
    source_mix: tuple[tuple[str, float], ...] = DEFAULT_SOURCE_MIX
    runbooks: tuple[RunbookScenario, ...] = (
        RunbookScenario("cleanup_dead_code", 0.6, 120),
        RunbookScenario("lint_autofix", 0.4, 120),
    )
    codemod_ids: tuple[str, ...] = ("codemod_fmt_v2",)
    radar_active_from_day: float = 0.0
    agent_eval_seconds: int = 60
    override_probability: float = 0.0
    revert_lag_seconds: int = 43_200
    pi_lag_seconds: int = 86_400
    drs_warmup: int = 200
    human_safe_content_prob: float = 0.5
    bot_safe_content_prob: float = 0.85
    risk_model: RiskModelParams = RiskModelParams()
    human_review: HumanReviewParams = HumanReviewParams()
    outcomes: OutcomeParams = OutcomeParams()
    agent_catch: AgentCatchParams = AgentCatchParams()

    def __post_init__(self):
        # Weighted pools are canonicalized (sorted by name) so that any
        # construction order of the same logical scenario draws the same stream.
        object.__setattr__(self, "orgs", tuple(self.orgs))
        object.__setattr__(
            self,
            "source_mix",
            tuple(sorted((str(k), float(v)) for k, v in self.source_mix)),
        )
        object.__setattr__(self, "runbooks", tuple(sorted(self.runbooks, key=lambda rb: rb.name)))
        object.__setattr__(self, "codemod_ids", tuple(self.codemod_ids))
        total = sum(p for _, p in self.source_mix)
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(f"source_mix must sum to 1, got {total}")
        for kind, p in self.source_mix:
            if kind not in {s.value for s in SourceType}:
                raise ScenarioError(f"unknown source kind in mix: {kind!r}")
            if not 0.0 <= p <= 1.0:
                raise ScenarioError(f"source_mix[{kind}] must be in [0,1]")
        if self.n_diffs < 0 or self.arrivals_per_day <= 0:
            raise ScenarioError("n_diffs must be >= 0 and arrivals_per_day > 0")
        if not self.orgs:
            raise ScenarioError("at least one org is required")

    @property
    def activation_at(self) -> int:
        return self.start_at + int(self.radar_active_from_day * SECONDS_PER_DAY)


@dataclass(frozen=True, slots=True)
class GroundTruth:
    """Per-diff latent outcomes and pre-drawn rolls, fixed at generation time."""

    diff_id: str
    has_defect: bool
    defect_class: str | None
    would_revert: bool
    would_pi: bool
    human_latency_draw: int
    catch_roll: float
    human_reject_roll: float
    override_roll: float

    def __post_init__(self):
        if self.would_revert and not self.has_defect:
            raise ValueError("would_revert requires has_defect")
        if self.would_pi and not self.has_defect:
            raise ValueError("would_pi requires has_defect")

    def to_dict(self) -> dict[str, Any]:
        return {
            "diff_id": self.diff_id,
            "has_defect": self.has_defect,
            "defect_class": self.defect_class,
            "would_revert": self.would_revert,
            "would_pi": self.would_pi,
            "human_latency_draw": self.human_latency_draw,
        }


class _Rng:
    """MT19937 uniforms with documented derived variates (Box-Muller, inverse-CDF)."""

    def __init__(self, seed: int):
        self._r = random.Random(seed)

    def uniform(self) -> float:
        return self._r.random()

    def randint(self, lo: int, hi: int) -> int:
        # Inclusive bounds, derived from one uniform draw.
        return lo + int(self.uniform() * (hi - lo + 1))

    def normal(self) -> float:
        u1, u2 = self.uniform(), self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def lognormal_int(self, mu: float, sigma: float, lo: int = 1, hi: int = 10**7) -> int:
        return max(lo, min(hi, int(math.exp(mu + sigma * self.normal()))))

    def exponential(self, mean: float) -> float:
        return -math.log(1.0 - self.uniform()) * mean

    def pick_weighted(self, pairs: Sequence[tuple[str, float]]) -> str:
        u = self.uniform()
        acc = 0.0
        for name, weight in pairs:
            acc += weight
            if u < acc:
                return name
        return pairs[-1][0]


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


_DIR_POOL = ("core", "svc", "lib", "app", "util", "web", "data", "infra")

SAFE_BOT_KINDS = ("dead_code", "formatting", "import", "logging")
SAFE_HUMAN_KINDS = ("formatting", "logging", "doc", "import")


def _make_hunks(kind: str, idx: int, file_no: int, lines: int) -> tuple[int, int, list[str]]:
    """Build (lines_added, lines_removed, hunk_texts) for one change."""
    lines = max(1, lines)
    if kind == "dead_code":
        body = "\n".join(f"-stale_value_{idx}_{file_no}_{k} = legacy_{k}()" for k in range(lines))
        return 0, lines, [body]
    if kind == "formatting":
        pairs = max(1, lines // 2)
        rows = []
        for k in range(pairs):
            rows.append(f"-total_{idx}_{k}=accumulate_{file_no}(part_{k})")
            rows.append(f"+total_{idx}_{k} = accumulate_{file_no}(part_{k})")
        return pairs, pairs, ["\n".join(rows)]
    if kind == "import":
        body = "\n".join(f"+import helpers_{idx}_{file_no}_{k}" for k in range(lines))
        return lines, 0, [body]
    if kind == "logging":
        body = "\n".join(
            f'+    logger.info("stage {idx}-{file_no}-{k} complete")' for k in range(lines)
        )
        return lines, 0, [body]
    if kind == "doc":
        body = "\n".join(f"+# clarifies step {k} of routine {idx}" for k in range(lines))
        return lines, 0, [body]
    # Generic behavioural change: intentionally unclassifiable by the rule agent.
    added = max(1, (lines * 2) // 3)
    removed = max(0, lines - added)
    rows = [f"+    result_{idx}_{k} = combine_{file_no}(value_{k}, mode_{k})" for k in range(added)]
    rows += [f"-    result_{idx}_{k} = build_{file_no}(value_{k})" for k in range(removed)]
    return added, removed, ["\n".join(rows)]


def _generate_one(cfg: ScenarioConfig, rng: _Rng, idx: int, created_at: int, prefix: str) -> tuple[Diff, GroundTruth]:
    diff_id = f"{prefix}{idx:06d}"
    source_kind = SourceType(rng.pick_weighted(cfg.source_mix))
    if source_kind is SourceType.RACER_RUNBOOK:
        weights = [(rb.name, rb.weight) for rb in cfg.runbooks]
        total = sum(w for _, w in weights) or 1.0
        source = SourceKind(source_kind, rng.pick_weighted([(n, w / total) for n, w in weights]))
    elif source_kind is SourceType.DETERMINISTIC_CODEMOD:
        source = SourceKind(source_kind, cfg.codemod_ids[rng.randint(0, len(cfg.codemod_ids) - 1)])
    elif source_kind is SourceType.AI_CODEMOD:
        source = SourceKind(source_kind, f"ai_codemod_{rng.randint(1, 3)}")
    else:
        source = SourceKind(SourceType.HUMAN)

    org = cfg.orgs[rng.randint(0, len(cfg.orgs) - 1)]
    if source.is_bot:
        author = AuthorProfile(
            id=f"bot:{source.name or source.kind.value}",
            role=Role.OTHER,
            employment_days=1000,
            diffs_committed_past_year=1000,
            has_oncall=True,
        )
    else:
        author = AuthorProfile(
            id=f"u{rng.randint(1, 100000)}",
            role=Role.SWE,
            employment_days=rng.randint(61, 3000),
            diffs_committed_past_year=rng.randint(11, 2000),
            has_oncall=True,
        )

    rm = cfg.risk_model
    u_files = rng.uniform()
    n_files = 1 + int(u_files * u_files * 5)  # skewed toward single-file diffs
    total_lines = rng.lognormal_int(rm.size_log_mean, rm.size_log_sigma, lo=1, hi=20_000)
    touches_config = rng.uniform() < rm.config_touch_prob
    safe_prob = cfg.bot_safe_content_prob if source.is_bot else cfg.human_safe_content_prob
    is_safe_content = rng.uniform() < safe_prob
    kind_pool = SAFE_BOT_KINDS if source.is_bot else SAFE_HUMAN_KINDS
    content_kind = kind_pool[rng.randint(0, len(kind_pool) - 1)] if is_safe_content else "generic"

    changes = []
    per_file = max(1, total_lines // n_files)
    for file_no in range(n_files):
        directory = _DIR_POOL[rng.randint(0, len(_DIR_POOL) - 1)]
        remaining = total_lines - per_file * file_no
        lines = per_file if file_no < n_files - 1 else max(1, remaining)
        if touches_config and file_no == n_files - 1:
            added, removed, hunks = _make_hunks("generic", idx, file_no, lines)
            path = f"config/settings_{idx}.toml"
        else:
            added, removed, hunks = _make_hunks(content_kind, idx, file_no, lines)
            path = f"{directory}/module_{idx}_{file_no}.py"
        changes.append(ChangeUnit(path, added, removed, tuple(hunks)))

    norm_size = math.log1p(total_lines) / math.log1p(rm.size_scale)
    p_defect = _logistic(rm.alpha + rm.beta * norm_size + rm.gamma * (1.0 if touches_config else 0.0))
    if source.kind is SourceType.DETERMINISTIC_CODEMOD:
        p_defect *= rm.det_codemod_defect_multiplier
    has_defect = rng.uniform() < p_defect
    defect_class = rng.pick_weighted(cfg.agent_catch.class_mix) if has_defect else None
    would_revert = has_defect and rng.uniform() < cfg.outcomes.revert_given_defect
    would_pi = has_defect and rng.uniform() < cfg.outcomes.pi_given_defect
    latency = rng.lognormal_int(
        cfg.human_review.latency_log_mean, cfg.human_review.latency_log_sigma, lo=60
    )
    truth = GroundTruth(
        diff_id=diff_id,
        has_defect=has_defect,
        defect_class=defect_class,
        would_revert=would_revert,
        would_pi=would_pi,
        human_latency_draw=latency,
        catch_roll=rng.uniform(),
        human_reject_roll=rng.uniform(),
        override_roll=rng.uniform(),
    )
    diff = Diff(
        id=diff_id,
        author=author,
        source=source,
        org=org,
        state=DiffStateFlags(),
        changes=tuple(changes),
        created_at=created_at,
        scope=ScopeFlags(),
        content_text="\n".join(h for c in changes for h in c.hunk_texts),
    )
    return diff, truth


def _stream_with_warmup(cfg: ScenarioConfig) -> tuple[list[Diff], list[Diff], list[GroundTruth]]:
    rng = _Rng(cfg.seed)
    warmup: list[Diff] = []
    # Warmup diffs calibrate the scoring window and never enter the funnel.
    # Their timestamps span the full prior day so time-of-day features are
    # balanced in the window from the first real arrival.
    warmup_step = SECONDS_PER_DAY // max(1, cfg.drs_warmup)
    for i in range(cfg.drs_warmup):
        d, _ = _generate_one(cfg, rng, i, cfg.start_at - SECONDS_PER_DAY + i * warmup_step, "W")
        warmup.append(d)
    mean_gap = SECONDS_PER_DAY / cfg.arrivals_per_day
    diffs: list[Diff] = []
    truths: list[GroundTruth] = []
    t = cfg.start_at
    for i in range(cfg.n_diffs):
        t += max(1, int(rng.exponential(mean_gap)))
        d, g = _generate_one(cfg, rng, i, t, "D")
        diffs.append(d)
        truths.append(g)
    return warmup, diffs, truths


def generate_stream(cfg: ScenarioConfig) -> tuple[list[Diff], list[GroundTruth]]:
    """Deterministic synthetic stream for a scenario (same stream simulate() uses)."""
    _, diffs, truths = _stream_with_warmup(cfg)
    return diffs, truths


class CatchingBackend:
    """Review backend wrapper modelling semantic defect detection.

    The rule backend cannot see synthetic logic bugs, so defective diffs get a
    matching risk signal injected with the per-class catch probability, decided
    by the diff's pre-drawn roll.
    """

    def __init__(
        self,
        inner: ReviewBackend,
        truths: Mapping[str, GroundTruth],
        params: AgentCatchParams,
    ):
        self.inner = inner
        self.truths = truths
        self.params = params

    def classify_diff(self, diff: Diff) -> BackendResult:
        result = self.inner.classify_diff(diff)
        truth = self.truths.get(diff.id)
        if truth is not None and truth.has_defect and truth.defect_class:
            if truth.catch_roll < self.params.catch_probability(truth.defect_class):
                signal = RiskSignal(RiskKind(truth.defect_class), "semantic review detection")
                per_change = list(result.per_change)
                safe, risk = per_change[0]
                per_change[0] = (safe, risk | {signal})
                return BackendResult(tuple(per_change), result.confidence)
        return result


def _seeded_ledger(rb: RunbookScenario, start_at: int) -> RunbookLedger:
    ledger = RunbookLedger(rb.name)
    if rb.seeded_landed <= 0:
        return ledger
    span = rb.seeded_days_ago * SECONDS_PER_DAY - SECONDS_PER_DAY
    first = start_at - rb.seeded_days_ago * SECONDS_PER_DAY
    step = max(1, span // max(1, rb.seeded_landed))
    for j in range(rb.seeded_landed):
        ledger.append(LedgerEntry(at=first + j * step, outcome=LedgerOutcome.LANDED))
    return ledger


@dataclass
class RunResult:
    """Everything one simulation run produced, reproducible byte-for-byte."""

    scenario: dict[str, Any]
    policy: dict[str, Any]
    decisions: list[DecisionEvent]
    lifecycle: list[dict[str, Any]]
    landings: list[dict[str, Any]]
    truth: list[dict[str, Any]]
    metrics: dict[str, Any]

    def serialize(self) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "policy": self.policy,
                "decisions": [d.to_dict() for d in self.decisions],
                "lifecycle": self.lifecycle,
                "landings": self.landings,
                "truth": self.truth,
                "metrics": self.metrics,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


_ARRIVAL = "arrival"
_PUMP = "pump"
_REVIEW_DONE = "review_done"
_LAND_DUE = "land_due"
_OVERRIDE_DUE = "override_due"
_REVERT_DUE = "revert_due"
_PI_DUE = "pi_due"


class _Sim:
    def __init__(self, cfg: ScenarioConfig, policy: PolicySet, pause: PauseControl | None):
        self.cfg = cfg
        self.policy = policy
        self.pause = pause
        warmup, self.diffs, self.truths = _stream_with_warmup(cfg)
        self.diff_by_id = {d.id: d for d in self.diffs}
        self.truth_by_id = {t.diff_id: t for t in self.truths}
        self.drs = DrsEngine(policy.drs)
        for d in warmup:
            self.drs.observe(self.drs.raw_score(d))
        self.keeper = LedgerKeeper()
        for rb in cfg.runbooks:
            self.keeper.add_ledger(_seeded_ledger(rb, cfg.start_at))
        self.backend = CatchingBackend(
            RuleBasedBackend(policy.acr), self.truth_by_id, cfg.agent_catch
        )
        self.heap: list[tuple[int, int, str, str]] = []
        self._seq = 0
        self.records: dict[str, dict[str, Any]] = {}
        self.lifecycle: list[dict[str, Any]] = []
        self.landings: dict[str, Any] = {}
        self.pending: deque[str] = deque()
        self.started_by_day: dict[int, int] = {}
        self._pump_armed_at: int | None = None

    def push(self, at: int, kind: str, diff_id: str = "") -> None:
        heapq.heappush(self.heap, (at, self._seq, kind, diff_id))
        self._seq += 1

    def emit(self, diff_id: str, kind: EventKind, at: int) -> None:
        self.lifecycle.append({"diff_id": diff_id, "kind": kind.value, "at": at})

    def ledger_record(self, diff: Diff, kind: EventKind, at: int) -> None:
        if diff.source.kind is SourceType.RACER_RUNBOOK:
            self.keeper.record(diff.source.name, LifecycleEvent(diff.id, kind, at))

    def run(self) -> RunResult:
        for diff in self.diffs:
            self.push(diff.created_at, _ARRIVAL, diff.id)
        while self.heap:
            at, _, kind, diff_id = heapq.heappop(self.heap)
            if kind == _ARRIVAL:
                self.on_arrival(self.diff_by_id[diff_id], at)
            elif kind == _PUMP:
                self._pump_armed_at = None
                self.pump(at)
                self.arm_pump(at)
            elif kind == _REVIEW_DONE:
                self.on_review_done(diff_id, at)
            elif kind == _LAND_DUE:
                self.on_land_due(diff_id, at)
            elif kind == _OVERRIDE_DUE:
                self.on_override_due(diff_id, at)
            elif kind == _REVERT_DUE:
                self.records[diff_id]["reverted"] = at
                self.emit(diff_id, EventKind.REVERTED, at)
                self.ledger_record(self.diff_by_id[diff_id], EventKind.REVERTED, at)
            elif kind == _PI_DUE:
                self.records[diff_id]["pi"] = at
                self.emit(diff_id, EventKind.PI_ATTRIBUTED, at)
                self.ledger_record(self.diff_by_id[diff_id], EventKind.PI_ATTRIBUTED, at)
        return self.finish()

    # -- event handlers --------------------------------------------------

    def on_arrival(self, diff: Diff, at: int) -> None:
        rec: dict[str, Any] = {
            "diff_id": diff.id,
            "org": diff.org,
            "source_kind": diff.source.kind.value,
            "source_name": diff.source.name,
            "authorship": "BOT" if diff.source.is_bot else "HUMAN",
            "published": at,
            "evaluated": False,
            "eligible": False,
            "outcome": Outcome.ROUTED_TO_HUMAN.value,
            "reasons": [],
            "rank": None,
            "review_started": None,
            "review_ended": None,
            "closed": None,
            "landed": None,
            "reverted": None,
            "pi": None,
        }
        self.records[diff.id] = rec
        self.emit(diff.id, EventKind.PUBLISHED, at)

        if at < self.cfg.activation_at:
            rec["reasons"] = [ReasonCode.RADAR_INACTIVE.value]
            self.enqueue_review(diff.id, at)
            return

        decision = evaluate_diff(
            diff, self.policy, self.keeper, self.drs, self.backend, self.pause, now=at
        )
        rec["evaluated"] = True
        first_stage = decision.stage(Stage.ELIGIBILITY) or decision.stage(Stage.VERIFICATION_G1)
        rec["eligible"] = bool(first_stage and first_stage.passed)
        rec["outcome"] = decision.outcome.value
        rec["reasons"] = [r.value for r in decision.reasons]
        rec["rank"] = decision.rank
        done = at + self.cfg.agent_eval_seconds

        if decision.outcome is Outcome.RADAR_LAND_SCHEDULED:
            rec["review_started"], rec["review_ended"] = at, done
            self.emit(diff.id, EventKind.REVIEW_STARTED, at)
            self.emit(diff.id, EventKind.REVIEW_ENDED, done)
            landing = decision.landing
            assert landing is not None
            self.landings[diff.id] = landing
            truth = self.truth_by_id[diff.id]
            if truth.override_roll < self.cfg.override_probability:
                midpoint = landing.scheduled_at + (landing.land_at - landing.scheduled_at) // 2
                self.push(max(midpoint, done), _OVERRIDE_DUE, diff.id)
            self.push(landing.land_at, _LAND_DUE, diff.id)
        elif decision.outcome in (
            Outcome.RADAR_VERIFIED_DEFERRED_REVIEW,
            Outcome.RADAR_APPROVED_NO_REVIEW,
        ):
            rec["review_started"], rec["review_ended"] = at, done
            self.emit(diff.id, EventKind.REVIEW_STARTED, at)
            self.emit(diff.id, EventKind.REVIEW_ENDED, done)
            verified_kind = (
                EventKind.APPROVED
                if decision.outcome is Outcome.RADAR_APPROVED_NO_REVIEW
                else EventKind.VERIFIED
            )
            self.emit(diff.id, verified_kind, done)
            # The author ships immediately; verified diffs carry a deferred-review obligation.
            self.land(diff, done)
        elif decision.outcome is Outcome.ROUTED_TO_HUMAN:
            self.enqueue_review(diff.id, at)
        else:  # BLOCKED is terminal: excluded from automation, closed unreviewed.
            rec["closed"] = done
            self.emit(diff.id, EventKind.CLOSED, done)

    def enqueue_review(self, diff_id: str, at: int) -> None:
        rec = self.records[diff_id]
        rec["review_started"] = at  # review requested at publish/route time
        self.emit(diff_id, EventKind.REVIEW_STARTED, at)
        self.pending.append(diff_id)
        self.pump(at)
        self.arm_pump(at)

    def pump(self, now: int) -> None:
        capacity = self.cfg.human_review.reviewer_capacity_per_day
        if capacity <= 0:
            return
        day = day_of(now)
        while self.pending and self.started_by_day.get(day, 0) < capacity:
            diff_id = self.pending.popleft()
            self.started_by_day[day] = self.started_by_day.get(day, 0) + 1
            done = now + self.truth_by_id[diff_id].human_latency_draw
            self.push(done, _REVIEW_DONE, diff_id)

    def arm_pump(self, now: int) -> None:
        if not self.pending or self.cfg.human_review.reviewer_capacity_per_day <= 0:
            return
        next_midnight = (day_of(now) + 1) * SECONDS_PER_DAY
        if self._pump_armed_at != next_midnight:
            self._pump_armed_at = next_midnight
            self.push(next_midnight, _PUMP, "")

    def on_review_done(self, diff_id: str, at: int) -> None:
        rec = self.records[diff_id]
        diff = self.diff_by_id[diff_id]
        truth = self.truth_by_id[diff_id]
        rec["review_ended"] = at
        self.emit(diff_id, EventKind.REVIEW_ENDED, at)
        reject_p = (
            self.cfg.human_review.reject_given_defect
            if truth.has_defect
            else self.cfg.human_review.reject_benign
        )
        if truth.human_reject_roll < reject_p:
            rec["closed"] = at
            self.emit(diff_id, EventKind.HUMAN_REJECTED, at)
            self.emit(diff_id, EventKind.CLOSED, at)
            self.ledger_record(diff, EventKind.HUMAN_REJECTED, at)
        else:
            self.land(diff, at)
        self.arm_pump(at)

    def land(self, diff: Diff, at: int) -> None:
        rec = self.records[diff.id]
        rec["landed"] = at
        rec["closed"] = at
        self.emit(diff.id, EventKind.LANDED, at)
        self.emit(diff.id, EventKind.CLOSED, at)
        self.ledger_record(diff, EventKind.LANDED, at)
        truth = self.truth_by_id[diff.id]
        if truth.would_revert:
            self.push(at + self.cfg.revert_lag_seconds, _REVERT_DUE, diff.id)
        if truth.would_pi:
            self.push(at + self.cfg.pi_lag_seconds, _PI_DUE, diff.id)

    def on_land_due(self, diff_id: str, at: int) -> None:
        landing = self.landings[diff_id]
        if landing.status is not LandingStatus.PENDING:
            return  # overridden during the delay window
        landing.mark_landed(at)
        self.land(self.diff_by_id[diff_id], at)

    def on_override_due(self, diff_id: str, at: int) -> None:
        landing = self.landings[diff_id]
        if landing.status is not LandingStatus.PENDING or at >= landing.land_at:
            return
        process_override(landing, at)
        rec = self.records[diff_id]
        rec["closed"] = at
        self.emit(diff_id, EventKind.HUMAN_REJECTED, at)
        self.emit(diff_id, EventKind.CLOSED, at)
        self.ledger_record(self.diff_by_id[diff_id], EventKind.HUMAN_REJECTED, at)

    # -- assembly ---------------------------------------------------------

    def finish(self) -> RunResult:
        decisions = [DecisionEvent.from_dict(self.records[d.id]) for d in self.diffs]
        landings = [
            {
                "diff_id": d.id,
                "scheduled_at": self.landings[d.id].scheduled_at,
                "land_at": self.landings[d.id].land_at,
                "status": self.landings[d.id].status.value,
            }
            for d in self.diffs
            if d.id in self.landings
        ]
        metrics = build_metrics(self.cfg, decisions, landings)
        return RunResult(
            scenario=scenario_to_dict(self.cfg),
            policy={},  # filled by simulate()
            decisions=decisions,
            lifecycle=self.lifecycle,
            landings=landings,
            truth=[t.to_dict() for t in self.truths],
            metrics=metrics,
        )


def simulate(cfg: ScenarioConfig, policy: PolicySet, pause: PauseControl | None = None) -> RunResult:
    """Run one scenario through the funnel on the virtual clock."""
    from .policy import policy_to_dict

    result = _Sim(cfg, policy, pause).run()
    result.policy = policy_to_dict(policy)
    result.metrics = dict(result.metrics)
    return result


def _try(fn, *args, exceptions=(EmptyWindow,), **kwargs):
    try:
        return fn(*args, **kwargs)
    except exceptions:
        return None


def build_metrics(
    cfg: ScenarioConfig, decisions: Sequence[DecisionEvent], landings: Sequence[dict]
) -> dict[str, Any]:
    window = MetricWindow.all()
    outcome_counts: dict[str, int] = {}
    for d in decisions:
        outcome_counts[d.outcome] = outcome_counts.get(d.outcome, 0) + 1

    closed = [d for d in decisions if d.closed is not None]
    radar_closed = [d for d in closed if d.outcome in APPROVED_OUTCOMES]
    human_closed = [d for d in closed if d.outcome == Outcome.ROUTED_TO_HUMAN.value]
    radar_landed = [d for d in decisions if d.outcome in APPROVED_OUTCOMES and d.landed is not None]
    human_landed = [
        d for d in decisions if d.outcome == Outcome.ROUTED_TO_HUMAN.value and d.landed is not None
    ]

    def _adverse_table(field_name: str) -> TwoByTwoTable | None:
        if not radar_landed or not human_landed:
            return None
        ra = sum(1 for d in radar_landed if getattr(d, field_name) is not None)
        ha = sum(1 for d in human_landed if getattr(d, field_name) is not None)
        return TwoByTwoTable(ra, len(radar_landed) - ra, ha, len(human_landed) - ha)

    def _table_stats(table: TwoByTwoTable | None) -> dict[str, Any]:
        if table is None:
            return {"table": None, "p_value": None, "rate_ratio": None}
        return {
            "table": [table.a, table.b, table.c, table.d],
            "p_value": _try(fisher_exact_two_sided, table, exceptions=(DegenerateMargins,)),
            "rate_ratio": _try(rate_ratio, table, exceptions=(ZeroBaseline, DegenerateMargins)),
        }

    did = None
    if any(d.published < cfg.activation_at for d in closed) and any(
        d.published >= cfg.activation_at for d in closed
    ):
        samples = [
            DidSample(
                group=DidGroup.TREATED if d.authorship == "BOT" else DidGroup.CONTROL,
                period=DidPeriod.BEFORE if d.published < cfg.activation_at else DidPeriod.AFTER,
                value=float(d.closed - d.published),
            )
            for d in closed
        ]
        did_result = _try(did_estimate, samples, exceptions=(EmptyCell,))
        if did_result is not None:
            did = {"mean_did": did_result.mean_did, "median_did": did_result.median_did}

    def _median(group_events, metric):
        return _try(median_latency, group_events, metric, Group.ALL, window)

    ttc_radar = _median(radar_closed, LatencyMetric.TIME_TO_CLOSE)
    ttc_human = _median(human_closed, LatencyMetric.TIME_TO_CLOSE)
    wall_radar = _median(
        [d for d in radar_closed if d.review_ended is not None], LatencyMetric.REVIEW_WALL_TIME
    )
    wall_human = _median(
        [d for d in human_closed if d.review_ended is not None], LatencyMetric.REVIEW_WALL_TIME
    )

    return {
        "n_diffs": len(decisions),
        "outcomes": dict(sorted(outcome_counts.items())),
        "evaluated": sum(1 for d in decisions if d.evaluated),
        "radar_landed": len(radar_landed),
        "human_landed": len(human_landed),
        "overridden": sum(1 for l in landings if l["status"] == LandingStatus.OVERRIDDEN.value),
        "open_backlog": sum(1 for d in decisions if d.closed is None),
        "approve_rate": _try(approve_rate, decisions, window),
        "verification_pass_rate": _try(verification_pass_rate, decisions, window),
        "median_time_to_close": {"radar": ttc_radar, "human": ttc_human},
        "median_review_wall_time": {"radar": wall_radar, "human": wall_human},
        # Both forms reported: the human/RADAR ratio and the percent reduction
        # (a ratio of 4x is a 75% reduction; reductions can never exceed 100%).
        "time_to_close_ratio_human_over_radar": (
            ttc_human / ttc_radar if ttc_radar and ttc_human else None
        ),
        "time_to_close_reduction_percent": (
            100.0 * (1 - ttc_radar / ttc_human) if ttc_radar and ttc_human else None
        ),
        "review_wall_time_ratio_human_over_radar": (
            wall_human / wall_radar if wall_radar and wall_human else None
        ),
        "review_wall_time_reduction_percent": (
            100.0 * (1 - wall_radar / wall_human) if wall_radar and wall_human else None
        ),
        "reverts": _table_stats(_adverse_table("reverted")),
        "pis": _table_stats(_adverse_table("pi")),
        "did_time_to_close": did,
    }


@dataclass(frozen=True, slots=True)
class SweepRow:
    threshold_x: int
    approve_rate: float | None
    verification_pass_rate: float | None
    revert_rate_ratio: float | None
    pi_rate_ratio: float | None
    landed_ids: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold_x,
            "approve_rate": self.approve_rate,
            "verification_pass_rate": self.verification_pass_rate,
            "revert_rate_ratio": self.revert_rate_ratio,
            "pi_rate_ratio": self.pi_rate_ratio,
            "landed": len(self.landed_ids),
        }


def policy_with_uniform_threshold(policy: PolicySet, threshold: PxThreshold) -> PolicySet:
    """Replace the human, bot-default, and allowlisted thresholds everywhere."""

    def retune(org):
        return replace(
            org,
            human_drs_threshold=threshold,
            bot_default_drs_threshold=threshold,
            allowlisted_runbook_drs_threshold=threshold,
        )

    return replace(
        policy,
        default_org=retune(policy.default_org),
        orgs={org_id: retune(op) for org_id, op in policy.orgs.items()},
    )


def threshold_sweep(
    cfg: ScenarioConfig, base_policy: PolicySet, thresholds: Sequence[PxThreshold]
) -> list[SweepRow]:
    """One simulate() per threshold on the identical seed; rows ordered by threshold."""
    if len(thresholds) < 2:
        raise ValueError("a sweep needs at least two thresholds")
    rows = []
    for threshold in sorted(thresholds, key=lambda t: t.x):
        result = simulate(cfg, policy_with_uniform_threshold(base_policy, threshold))
        landed = tuple(
            d.diff_id
            for d in result.decisions
            if d.outcome in APPROVED_OUTCOMES and d.landed is not None
        )
        rows.append(
            SweepRow(
                threshold_x=threshold.x,
                approve_rate=result.metrics["approve_rate"],
                verification_pass_rate=result.metrics["verification_pass_rate"],
                revert_rate_ratio=result.metrics["reverts"]["rate_ratio"],
                pi_rate_ratio=result.metrics["pis"]["rate_ratio"],
                landed_ids=landed,
            )
        )
    return rows


@dataclass(frozen=True, slots=True)
class ComparisonReport:
    median_ttc_radar: float
    median_ttc_human: float
    ttc_ratio_human_over_radar: float
    median_wall_radar: float
    median_wall_human: float
    wall_ratio_human_over_radar: float
    revert_table: TwoByTwoTable | None
    revert_p: float | None
    revert_ratio: float | None
    pi_table: TwoByTwoTable | None
    pi_p: float | None
    pi_ratio: float | None
    did: DidResult | None


def compare_radar_vs_human(result: RunResult) -> ComparisonReport:
    """Efficiency and safety comparison between RADAR-handled and human-reviewed diffs."""
    closed = [d for d in result.decisions if d.closed is not None]
    radar = [d for d in closed if d.outcome in APPROVED_OUTCOMES]
    human = [d for d in closed if d.outcome == Outcome.ROUTED_TO_HUMAN.value]
    if not radar or not human:
        raise MissingGroup("need both RADAR-handled and human-reviewed closed diffs")

    ttc_radar = median_latency(radar, LatencyMetric.TIME_TO_CLOSE)
    ttc_human = median_latency(human, LatencyMetric.TIME_TO_CLOSE)
    wall_radar = median_latency(
        [d for d in radar if d.review_ended is not None], LatencyMetric.REVIEW_WALL_TIME
    )
    wall_human = median_latency(
        [d for d in human if d.review_ended is not None], LatencyMetric.REVIEW_WALL_TIME
    )

    def _adverse(field_name: str) -> TwoByTwoTable | None:
        radar_landed = [d for d in result.decisions if d.outcome in APPROVED_OUTCOMES and d.landed]
        human_landed = [
            d
            for d in result.decisions
            if d.outcome == Outcome.ROUTED_TO_HUMAN.value and d.landed
        ]
        if not radar_landed or not human_landed:
            return None
        ra = sum(1 for d in radar_landed if getattr(d, field_name) is not None)
        ha = sum(1 for d in human_landed if getattr(d, field_name) is not None)
        return TwoByTwoTable(ra, len(radar_landed) - ra, ha, len(human_landed) - ha)

    revert_table = _adverse("reverted")
    pi_table = _adverse("pi")

    activation_at = result.scenario["scenario"]["start_at"] + int(
        result.scenario["scenario"]["radar_active_from_day"] * SECONDS_PER_DAY
    )
    did = None
    before = [d for d in closed if d.published < activation_at]
    after = [d for d in closed if d.published >= activation_at]
    if before and after:
        samples = [
            DidSample(
                group=DidGroup.TREATED if d.authorship == "BOT" else DidGroup.CONTROL,
                period=DidPeriod.BEFORE if d.published < activation_at else DidPeriod.AFTER,
                value=float(d.closed - d.published),
            )
            for d in closed
        ]
        try:
            did = did_estimate(samples)
        except EmptyCell:
            did = None

    return ComparisonReport(
        median_ttc_radar=ttc_radar,
        median_ttc_human=ttc_human,
        ttc_ratio_human_over_radar=ttc_human / ttc_radar,
        median_wall_radar=wall_radar,
        median_wall_human=wall_human,
        wall_ratio_human_over_radar=wall_human / wall_radar,
        revert_table=revert_table,
        revert_p=_try(fisher_exact_two_sided, revert_table, exceptions=(DegenerateMargins,))
        if revert_table
        else None,
        revert_ratio=_try(rate_ratio, revert_table, exceptions=(ZeroBaseline, DegenerateMargins))
        if revert_table
        else None,
        pi_table=pi_table,
        pi_p=_try(fisher_exact_two_sided, pi_table, exceptions=(DegenerateMargins,))
        if pi_table
        else None,
        pi_ratio=_try(rate_ratio, pi_table, exceptions=(ZeroBaseline, DegenerateMargins))
        if pi_table
        else None,
        did=did,
    )


# --- scenario (de)serialization --------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    return {
        "scenario": {
            "seed": cfg.seed,
            "n_diffs": cfg.n_diffs,
            "start_at": cfg.start_at,
            "arrivals_per_day": cfg.arrivals_per_day,
            "orgs": list(cfg.orgs),
            "radar_active_from_day": cfg.radar_active_from_day,
            "agent_eval_seconds": cfg.agent_eval_seconds,
            "override_probability": cfg.override_probability,
            "revert_lag_seconds": cfg.revert_lag_seconds,
            "pi_lag_seconds": cfg.pi_lag_seconds,
            "drs_warmup": cfg.drs_warmup,
            "human_safe_content_prob": cfg.human_safe_content_prob,
            "bot_safe_content_prob": cfg.bot_safe_content_prob,
            "codemod_ids": list(cfg.codemod_ids),
            "source_mix": {k: v for k, v in cfg.source_mix},
            "runbooks": {
                rb.name: {
                    "weight": rb.weight,
                    "seeded_landed": rb.seeded_landed,
                    "seeded_days_ago": rb.seeded_days_ago,
                }
                for rb in cfg.runbooks
            },
            "risk_model": {
                "alpha": cfg.risk_model.alpha,
                "beta": cfg.risk_model.beta,
                "gamma": cfg.risk_model.gamma,
                "size_log_mean": cfg.risk_model.size_log_mean,
                "size_log_sigma": cfg.risk_model.size_log_sigma,
                "config_touch_prob": cfg.risk_model.config_touch_prob,
                "size_scale": cfg.risk_model.size_scale,
                "det_codemod_defect_multiplier": cfg.risk_model.det_codemod_defect_multiplier,
            },
            "human_review": {
                "latency_log_mean": cfg.human_review.latency_log_mean,
                "latency_log_sigma": cfg.human_review.latency_log_sigma,
                "reviewer_capacity_per_day": cfg.human_review.reviewer_capacity_per_day,
                "reject_given_defect": cfg.human_review.reject_given_defect,
                "reject_benign": cfg.human_review.reject_benign,
            },
            "outcomes": {
                "revert_given_defect": cfg.outcomes.revert_given_defect,
                "pi_given_defect": cfg.outcomes.pi_given_defect,
            },
            "agent_catch": {
                "bug_or_logic_error": cfg.agent_catch.bug_or_logic_error,
                "performance_risk": cfg.agent_catch.performance_risk,
                "security_vulnerability": cfg.agent_catch.security_vulnerability,
                "class_mix": {k: v for k, v in cfg.agent_catch.class_mix},
            },
        }
    }


def scenario_from_dict(doc: Mapping[str, Any]) -> ScenarioConfig:
    try:
        return _scenario_from_dict(doc)
    except (TypeError, ValueError, AttributeError, KeyError) as exc:
        # Shape errors in an otherwise-parseable document are input errors.
        raise ScenarioError(f"bad scenario document: {exc}")


def _scenario_from_dict(doc: Mapping[str, Any]) -> ScenarioConfig:
    section = dict(doc.get("scenario", doc))
    kwargs: dict[str, Any] = {}
    simple = (
        "seed",
        "n_diffs",
        "start_at",
        "arrivals_per_day",
        "radar_active_from_day",
        "agent_eval_seconds",
        "override_probability",
        "revert_lag_seconds",
        "pi_lag_seconds",
        "drs_warmup",
        "human_safe_content_prob",
        "bot_safe_content_prob",
    )
    for key in simple:
        if key in section:
            kwargs[key] = section[key]
    if "orgs" in section:
        kwargs["orgs"] = tuple(section["orgs"])
    if "codemod_ids" in section:
        kwargs["codemod_ids"] = tuple(section["codemod_ids"])
    if "source_mix" in section:
        kwargs["source_mix"] = tuple(sorted(section["source_mix"].items()))
    if "runbooks" in section:
        kwargs["runbooks"] = tuple(
            RunbookScenario(
                name=name,
                weight=float(rb.get("weight", 1.0)),
                seeded_landed=int(rb.get("seeded_landed", 0)),
                seeded_days_ago=int(rb.get("seeded_days_ago", 30)),
            )
            for name, rb in sorted(section["runbooks"].items())
        )
    if "risk_model" in section:
        kwargs["risk_model"] = RiskModelParams(**section["risk_model"])
    if "human_review" in section:
        kwargs["human_review"] = HumanReviewParams(**section["human_review"])
    if "outcomes" in section:
        kwargs["outcomes"] = OutcomeParams(**section["outcomes"])
    if "agent_catch" in section:
        catch = dict(section["agent_catch"])
        if "class_mix" in catch:
            catch["class_mix"] = tuple(sorted(catch["class_mix"].items()))
        kwargs["agent_catch"] = AgentCatchParams(**catch)
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ScenarioError(f"bad scenario document: {exc}")


def load_scenario(text: str) -> ScenarioConfig:
    stripped = text.lstrip()
    try:
        doc = json.loads(text) if stripped.startswith("{") else _toml.loads(text)
    except (json.JSONDecodeError, _toml.TOMLDecodeError) as exc:
        raise ScenarioError(f"scenario document does not parse: {exc}")
    return scenario_from_dict(doc)
