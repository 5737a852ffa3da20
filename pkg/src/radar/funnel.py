"""Pipeline orchestration: ACE for bot diffs, Verification/Approval for humans.

Both pipelines are conjunctions of layered gates with short-circuit semantics:
evaluation stops at the first failing stage and no later stage is recorded.
Bot diffs that clear every layer are scheduled to land after the org's
configurable delay, during which a human can still override. Human diffs that
clear verification can ship with a deferred post-land review; approval then
applies stricter criteria to waive review entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .agent import Decision, ReviewBackend, review
from .diffs import Diff, SourceType, day_of
from .eligibility import (
    EligibilityDecision,
    LedgerKeeper,
    ReasonCode,
    Route,
    content_checks,
    human_eligible,
    route_bot,
)
from .errors import RadarError
from .policy import BYPASS, PolicySet, resolve_threshold
from .risk import COLD_START, DrsEngine, passes_threshold


class Stage(str, Enum):
    ELIGIBILITY = "ELIGIBILITY"
    STATIC_HEURISTICS = "STATIC_HEURISTICS"
    DRS = "DRS"
    REVIEW_AGENT = "REVIEW_AGENT"
    CONTENT = "CONTENT"
    VERIFICATION_G1 = "VERIFICATION_G1"
    VERIFICATION_G2 = "VERIFICATION_G2"
    VERIFICATION_G3 = "VERIFICATION_G3"
    APPROVAL = "APPROVAL"


class Outcome(str, Enum):
    RADAR_LAND_SCHEDULED = "RADAR_LAND_SCHEDULED"
    RADAR_VERIFIED_DEFERRED_REVIEW = "RADAR_VERIFIED_DEFERRED_REVIEW"
    RADAR_APPROVED_NO_REVIEW = "RADAR_APPROVED_NO_REVIEW"
    ROUTED_TO_HUMAN = "ROUTED_TO_HUMAN"
    BLOCKED = "BLOCKED"


@dataclass(frozen=True, slots=True)
class StageResult:
    stage: Stage
    passed: bool
    reasons: tuple[ReasonCode, ...] = ()
    at: int = 0


class LandingStatus(str, Enum):
    PENDING = "PENDING"
    LANDED = "LANDED"
    OVERRIDDEN = "OVERRIDDEN"


class TooLate(RadarError):
    pass


class AlreadyResolved(RadarError):
    pass


class NotDue(RadarError):
    pass


class NotVerified(RadarError):
    pass


class InvalidState(RadarError):
    pass


@dataclass(slots=True)
class DeferredLanding:
    """A scheduled bot landing with a human-override window before land_at."""

    diff_id: str
    scheduled_at: int
    land_at: int
    status: LandingStatus = LandingStatus.PENDING

    def mark_landed(self, at: int) -> "DeferredLanding":
        if self.status is not LandingStatus.PENDING:
            raise AlreadyResolved(f"{self.diff_id} already {self.status.value}")
        if at < self.land_at:
            raise NotDue(f"{self.diff_id} lands at {self.land_at}, not {at}")
        self.status = LandingStatus.LANDED
        return self


def process_override(landing: DeferredLanding, rejection_at: int) -> DeferredLanding:
    """Human rejection during the delay window. At/after land_at it is too late."""
    if landing.status is not LandingStatus.PENDING:
        raise AlreadyResolved(f"{landing.diff_id} already {landing.status.value}")
    if rejection_at >= landing.land_at:
        raise TooLate(
            f"{landing.diff_id} landed at {landing.land_at}; rejection at {rejection_at} has no effect"
        )
    landing.status = LandingStatus.OVERRIDDEN
    return landing


@dataclass(slots=True)
class PauseControl:
    """Operational kill switch: paused sources (kind or runbook/codemod name) and orgs."""

    paused_sources: set[str] = field(default_factory=set)
    paused_orgs: set[str] = field(default_factory=set)

    def is_paused(self, diff: Diff) -> bool:
        return (
            diff.org in self.paused_orgs
            or diff.source.kind.value in self.paused_sources
            or (bool(diff.source.name) and diff.source.name in self.paused_sources)
        )

    def to_dict(self) -> dict:
        return {
            "paused_sources": sorted(self.paused_sources),
            "paused_orgs": sorted(self.paused_orgs),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PauseControl":
        return cls(
            paused_sources=set(raw.get("paused_sources", ())),
            paused_orgs=set(raw.get("paused_orgs", ())),
        )


@dataclass(frozen=True, slots=True)
class PipelineDecision:
    diff_id: str
    outcome: Outcome
    stages: tuple[StageResult, ...] = ()
    reasons: tuple[ReasonCode, ...] = ()
    rank: float | None = None
    confidence: int | None = None
    effort: int | None = None
    landing: DeferredLanding | None = None

    def stage(self, stage: Stage) -> StageResult | None:
        for result in self.stages:
            if result.stage is stage:
                return result
        return None


def _scope_reasons(diff: Diff) -> tuple[ReasonCode, ...]:
    reasons = []
    if diff.scope.is_open_source:
        reasons.append(ReasonCode.OPEN_SOURCE)
    if diff.scope.is_sox:
        reasons.append(ReasonCode.SOX_SCOPE)
    if diff.scope.requires_additional_review:
        reasons.append(ReasonCode.ADDITIONAL_REVIEW)
    return tuple(reasons)


def run_ace(
    diff: Diff,
    policy: PolicySet,
    ledger_keeper: LedgerKeeper,
    drs: DrsEngine,
    agent: ReviewBackend,
    pause: PauseControl | None = None,
    now: int | None = None,
) -> PipelineDecision:
    """The bot pipeline: eligibility routing, scope heuristics, DRS gate, review agent.

    Blanket AutoAccept diffs skip the per-diff DRS and agent layers but still
    pass the scope heuristics. Eligibility failures are BLOCKED; later-layer
    failures route to human review. Paused sources are not evaluated at all.
    """
    at = diff.created_at if now is None else now
    if pause is not None and pause.is_paused(diff):
        return PipelineDecision(
            diff.id, Outcome.ROUTED_TO_HUMAN, stages=(), reasons=(ReasonCode.PAUSED,)
        )

    stages: list[StageResult] = []

    # Layer 1a: source routing and per-runbook checks (with atomic cap admission).
    is_runbook = diff.source.kind is SourceType.RACER_RUNBOOK
    ledger = ledger_keeper.ledger(diff.source.name) if is_runbook else None
    admitted = (
        ledger_keeper.admitted_on(diff.source.name, day_of(at)) if is_runbook else None
    )
    eligibility = route_bot(diff, policy, ledger, at, admitted_today=admitted)
    if eligibility.eligible and is_runbook:
        granted = ledger_keeper.try_admit(
            diff.source.name, day_of(at), policy.runbook_policy(diff.source.name).daily_cap
        )
        if not granted:
            eligibility = EligibilityDecision(
                False, Route.BLOCKED, (ReasonCode.DAILY_CAP,)
            )
    stages.append(StageResult(Stage.ELIGIBILITY, eligibility.eligible, eligibility.reasons, at))
    if not eligibility.eligible:
        return PipelineDecision(
            diff.id, Outcome.BLOCKED, tuple(stages), eligibility.reasons
        )

    # Layer 1b: static scope heuristics (apply to Blanket AutoAccept too).
    scope_reasons = _scope_reasons(diff)
    stages.append(StageResult(Stage.STATIC_HEURISTICS, not scope_reasons, scope_reasons, at))
    if scope_reasons:
        return PipelineDecision(
            diff.id, Outcome.ROUTED_TO_HUMAN, tuple(stages), scope_reasons
        )

    org = policy.org_policy(diff.org)
    if eligibility.route is Route.BLANKET_AUTOACCEPT:
        landing = DeferredLanding(diff.id, at, at + org.landing_delay_seconds)
        return PipelineDecision(
            diff.id, Outcome.RADAR_LAND_SCHEDULED, tuple(stages), landing=landing
        )

    # Layer 2: DRS gate at the resolved threshold, unless bypassed.
    rank = None
    if eligibility.threshold is not BYPASS:
        raw = drs.raw_score(diff)
        ranked = drs.rank_and_observe(raw)
        if ranked is COLD_START:
            reasons = (ReasonCode.DRS_COLD_START,)
            stages.append(StageResult(Stage.DRS, False, reasons, at))
            return PipelineDecision(diff.id, Outcome.ROUTED_TO_HUMAN, tuple(stages), reasons)
        rank = ranked
        if not passes_threshold(rank, eligibility.threshold):
            reasons = (ReasonCode.DRS_ABOVE_THRESHOLD,)
            stages.append(StageResult(Stage.DRS, False, reasons, at))
            return PipelineDecision(
                diff.id, Outcome.ROUTED_TO_HUMAN, tuple(stages), reasons, rank=rank
            )
        stages.append(StageResult(Stage.DRS, True, (), at))

    # Layer 3: the review agent must auto-accept.
    verdict = review(diff, agent, policy.acr)
    agent_ok = verdict.decision is Decision.AUTO_ACCEPT
    agent_reasons = () if agent_ok else (ReasonCode.AGENT_REJECTED,)
    stages.append(StageResult(Stage.REVIEW_AGENT, agent_ok, agent_reasons, at))
    if not agent_ok:
        return PipelineDecision(
            diff.id,
            Outcome.ROUTED_TO_HUMAN,
            tuple(stages),
            agent_reasons,
            rank=rank,
            confidence=verdict.confidence,
            effort=verdict.effort_score,
        )

    landing = DeferredLanding(diff.id, at, at + org.landing_delay_seconds)
    return PipelineDecision(
        diff.id,
        Outcome.RADAR_LAND_SCHEDULED,
        tuple(stages),
        rank=rank,
        confidence=verdict.confidence,
        effort=verdict.effort_score,
        landing=landing,
    )


def run_verification(
    diff: Diff,
    policy: PolicySet,
    drs: DrsEngine,
    agent: ReviewBackend,
    now: int | None = None,
) -> PipelineDecision:
    """The human pipeline's first step: three sequential verification groups.

    G1: author eligibility, diff state, scope, and CI checks. G2: content
    blocklists. G3: review-agent auto-accept combined with the DRS gate at the
    org's human threshold. Passing all three yields a diff that can ship
    immediately with a deferred post-land review.
    """
    at = diff.created_at if now is None else now
    org = policy.org_policy(diff.org)
    stages: list[StageResult] = []

    g1_reasons: list[ReasonCode] = []
    if not org.deferred_review_enabled:
        g1_reasons.append(ReasonCode.DEFERRED_REVIEW_DISABLED)
    if SourceType.HUMAN not in org.permitted_sources:
        g1_reasons.append(ReasonCode.SOURCE_NOT_PERMITTED)
    _, author_reasons = human_eligible(diff, policy)
    g1_reasons.extend(author_reasons)
    stages.append(StageResult(Stage.VERIFICATION_G1, not g1_reasons, tuple(g1_reasons), at))
    if g1_reasons:
        return PipelineDecision(diff.id, Outcome.ROUTED_TO_HUMAN, tuple(stages), tuple(g1_reasons))

    _, g2_reasons = content_checks(diff, policy.blocklists)
    stages.append(StageResult(Stage.VERIFICATION_G2, not g2_reasons, tuple(g2_reasons), at))
    if g2_reasons:
        return PipelineDecision(diff.id, Outcome.ROUTED_TO_HUMAN, tuple(stages), tuple(g2_reasons))

    g3_reasons: list[ReasonCode] = []
    verdict = review(diff, agent, policy.acr)
    if verdict.decision is not Decision.AUTO_ACCEPT:
        g3_reasons.append(ReasonCode.AGENT_REJECTED)
    threshold = resolve_threshold(policy, diff.org, diff.source)
    rank = None
    ranked = drs.rank_and_observe(drs.raw_score(diff))
    if ranked is COLD_START:
        g3_reasons.append(ReasonCode.DRS_COLD_START)
    else:
        rank = ranked
        if not passes_threshold(rank, threshold):
            g3_reasons.append(ReasonCode.DRS_ABOVE_THRESHOLD)
    stages.append(StageResult(Stage.VERIFICATION_G3, not g3_reasons, tuple(g3_reasons), at))
    outcome = Outcome.ROUTED_TO_HUMAN if g3_reasons else Outcome.RADAR_VERIFIED_DEFERRED_REVIEW
    return PipelineDecision(
        diff.id,
        outcome,
        tuple(stages),
        tuple(g3_reasons),
        rank=rank,
        confidence=verdict.confidence,
        effort=verdict.effort_score,
    )


def run_approval(
    verified: PipelineDecision,
    policy: PolicySet,
    drs: DrsEngine,
    agent: ReviewBackend,
    now: int | None = None,
) -> PipelineDecision:
    """The stricter second step: waive the deferred review entirely.

    Applies the approval gate (tighter DRS threshold, higher confidence floor,
    lower effort ceiling) to the values recorded at verification. Failing
    approval leaves the diff verified with its deferred-review obligation.
    """
    if verified.outcome is not Outcome.RADAR_VERIFIED_DEFERRED_REVIEW:
        raise NotVerified(f"{verified.diff_id} has outcome {verified.outcome.value}")
    at = verified.stages[-1].at if now is None and verified.stages else (now or 0)
    cfg = policy.approval

    reasons: list[ReasonCode] = []
    if verified.rank is None or not passes_threshold(verified.rank, cfg.drs_threshold):
        reasons.append(ReasonCode.APPROVAL_DRS)
    if verified.confidence is None or verified.confidence < cfg.min_confidence:
        reasons.append(ReasonCode.APPROVAL_CONFIDENCE)
    if verified.effort is None or verified.effort > cfg.max_effort:
        reasons.append(ReasonCode.APPROVAL_EFFORT)

    stage = StageResult(Stage.APPROVAL, not reasons, tuple(reasons), at)
    if reasons:
        return replace(verified, stages=verified.stages + (stage,))
    return replace(
        verified,
        outcome=Outcome.RADAR_APPROVED_NO_REVIEW,
        stages=verified.stages + (stage,),
    )


class AuthorAction(str, Enum):
    SHIP = "SHIP"
    WAIT_FOR_HUMAN = "WAIT_FOR_HUMAN"
    RETURN_TO_NEEDS_REVIEW = "RETURN_TO_NEEDS_REVIEW"


@dataclass(frozen=True, slots=True)
class AuthorActionResult:
    diff_id: str
    action: AuthorAction
    new_state: str  # LANDED | WAITING_FOR_REVIEW | NEEDS_REVIEW
    deferred_review_required: bool


def author_action(decision: PipelineDecision, action: AuthorAction) -> AuthorActionResult:
    """Resolve the author's choice on a verified or approved diff.

    Shipping a verified diff lands it with a deferred-review obligation;
    shipping an approved diff lands it with none. Returning to "Needs Review"
    voids the verification.
    """
    if decision.outcome not in (
        Outcome.RADAR_VERIFIED_DEFERRED_REVIEW,
        Outcome.RADAR_APPROVED_NO_REVIEW,
    ):
        raise InvalidState(
            f"author actions apply to verified/approved diffs, not {decision.outcome.value}"
        )
    if action is AuthorAction.SHIP:
        return AuthorActionResult(
            decision.diff_id,
            action,
            new_state="LANDED",
            deferred_review_required=decision.outcome
            is Outcome.RADAR_VERIFIED_DEFERRED_REVIEW,
        )
    if action is AuthorAction.WAIT_FOR_HUMAN:
        return AuthorActionResult(decision.diff_id, action, "WAITING_FOR_REVIEW", False)
    return AuthorActionResult(decision.diff_id, action, "NEEDS_REVIEW", False)


def evaluate_diff(
    diff: Diff,
    policy: PolicySet,
    ledger_keeper: LedgerKeeper,
    drs: DrsEngine,
    agent: ReviewBackend,
    pause: PauseControl | None = None,
    now: int | None = None,
) -> PipelineDecision:
    """Route one diff through the appropriate pipeline end to end.

    Bot diffs run ACE; human diffs run Verification, and verified diffs are
    automatically evaluated for Approval.
    """
    if diff.source.is_bot:
        return run_ace(diff, policy, ledger_keeper, drs, agent, pause, now)
    if pause is not None and pause.is_paused(diff):
        return PipelineDecision(
            diff.id, Outcome.ROUTED_TO_HUMAN, stages=(), reasons=(ReasonCode.PAUSED,)
        )
    verified = run_verification(diff, policy, drs, agent, now)
    if verified.outcome is Outcome.RADAR_VERIFIED_DEFERRED_REVIEW:
        return run_approval(verified, policy, drs, agent, now)
    return verified
