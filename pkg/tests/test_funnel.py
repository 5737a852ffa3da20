"""Funnel orchestration: layer conjunction, short-circuit, pauses, state machines."""

from __future__ import annotations

import pytest

from radar.agent import BackendResult, RuleBasedBackend, SafeSignal
from radar.diffs import ScopeFlags, SourceType
from radar.eligibility import LedgerKeeper, ReasonCode, RunbookLedger
from radar.funnel import (
    AlreadyResolved,
    AuthorAction,
    AuthorActionResult,
    DeferredLanding,
    InvalidState,
    LandingStatus,
    NotDue,
    NotVerified,
    Outcome,
    PauseControl,
    PipelineDecision,
    Stage,
    TooLate,
    author_action,
    evaluate_diff,
    process_override,
    run_ace,
    run_approval,
    run_verification,
)
from radar.policy import DrsConfig, PolicySet, PxThreshold, RunbookPolicy
from radar.risk import DrsEngine

from conftest import (
    T0,
    ai_codemod_source,
    det_codemod_source,
    make_author,
    make_change,
    make_diff,
    runbook_source,
)
from test_eligibility import NOW, clean_ledger

# Scoring isolated onto author_diffs_past_year so tests can pick a raw score
# without inflating diff size (which would trip the effort gate).
TENURE_ONLY_DRS = DrsConfig(weights=(0, 0, 0, 0, 1.0, 0, 0, 0))


@pytest.fixture
def default_policy(default_policy):
    from dataclasses import replace

    return replace(default_policy, drs=TENURE_ONLY_DRS)


def warm_engine(policy: PolicySet, scores=None) -> DrsEngine:
    """Engine precalibrated with a known uniform ladder: raw r ranks at (r+0.5)/100."""
    engine = DrsEngine(policy.drs)
    for raw in scores if scores is not None else range(100):
        engine.observe(float(raw))
    return engine


class _FixedBackend:
    """Backend stub returning all-safe classifications at a fixed confidence."""

    def __init__(self, confidence=10, safe=True):
        self.confidence = confidence
        self.safe = safe

    def classify_diff(self, diff):
        per_change = tuple(
            (
                frozenset({SafeSignal.DEAD_CODE_REMOVAL}) if self.safe else frozenset(),
                frozenset(),
            )
            for _ in diff.changes
        )
        return BackendResult(per_change, self.confidence)


class _ScoredDiff:
    """Builds diffs whose tenure-only raw score is a chosen value."""

    @staticmethod
    def with_raw(policy: PolicySet, raw: float, **overrides):
        overrides.setdefault("author", make_author(diffs_committed_past_year=int(raw)))
        return make_diff(**overrides)


def keeper_with(*ledgers: RunbookLedger) -> LedgerKeeper:
    keeper = LedgerKeeper()
    for ledger in ledgers:
        keeper.add_ledger(ledger)
    return keeper


class TestRunAce:
    def test_blanket_codemod_skips_drs_and_agent(self, default_policy):
        diff = make_diff(source=det_codemod_source("import_sort_v2"), created_at=NOW)
        decision = run_ace(
            diff, default_policy, keeper_with(), DrsEngine(default_policy.drs), _FixedBackend()
        )
        assert decision.outcome is Outcome.RADAR_LAND_SCHEDULED
        assert decision.stage(Stage.DRS) is None
        assert decision.stage(Stage.REVIEW_AGENT) is None
        assert decision.landing is not None
        assert decision.landing.land_at == NOW + 3600

    def test_allowlisted_runbook_rank_045_lands_under_p50(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(
            default_policy, 45.0, source=runbook_source("cleanup_dead_code"), created_at=NOW
        )
        # Hunks must be agent-acceptable: replace with pure deletions.
        decision = run_ace(
            diff,
            default_policy,
            keeper_with(clean_ledger()),
            engine,
            _FixedBackend(),
        )
        assert decision.outcome is Outcome.RADAR_LAND_SCHEDULED
        assert decision.rank == pytest.approx(0.455)

    def test_ai_codemod_rank_045_fails_p20(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(
            default_policy, 45.0, source=ai_codemod_source(), created_at=NOW
        )
        decision = run_ace(diff, default_policy, keeper_with(), engine, _FixedBackend())
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.reasons == (ReasonCode.DRS_ABOVE_THRESHOLD,)
        assert decision.stage(Stage.REVIEW_AGENT) is None  # short-circuit

    def test_eligibility_block_is_terminal(self, default_policy):
        diff = make_diff(source=runbook_source("fix_broken_tests"), created_at=NOW)
        decision = run_ace(
            diff,
            default_policy,
            keeper_with(clean_ledger("fix_broken_tests")),
            DrsEngine(default_policy.drs),
            _FixedBackend(),
        )
        assert decision.outcome is Outcome.BLOCKED
        assert len(decision.stages) == 1  # nothing after the failing stage

    def test_scope_failure_routes_to_human_even_for_blanket(self, default_policy):
        diff = make_diff(
            source=det_codemod_source("import_sort_v2"),
            scope=ScopeFlags(is_sox=True),
            created_at=NOW,
        )
        decision = run_ace(
            diff, default_policy, keeper_with(), DrsEngine(default_policy.drs), _FixedBackend()
        )
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.reasons == (ReasonCode.SOX_SCOPE,)

    def test_cold_start_fails_closed(self, default_policy):
        diff = make_diff(source=ai_codemod_source(), created_at=NOW)
        decision = run_ace(
            diff, default_policy, keeper_with(), DrsEngine(default_policy.drs), _FixedBackend()
        )
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.reasons == (ReasonCode.DRS_COLD_START,)

    def test_agent_rejection_routes(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(default_policy, 1.0, source=ai_codemod_source(), created_at=NOW)
        decision = run_ace(
            diff, default_policy, keeper_with(), engine, _FixedBackend(safe=False)
        )
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.reasons == (ReasonCode.AGENT_REJECTED,)

    def test_paused_source_not_evaluated(self, default_policy):
        pause = PauseControl(paused_sources={"cleanup_dead_code"})
        diff = make_diff(source=runbook_source("cleanup_dead_code"), created_at=NOW)
        decision = run_ace(
            diff,
            default_policy,
            keeper_with(clean_ledger()),
            DrsEngine(default_policy.drs),
            _FixedBackend(),
            pause,
        )
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.reasons == (ReasonCode.PAUSED,)
        assert decision.stages == ()

    def test_paused_org_not_evaluated(self, default_policy):
        pause = PauseControl(paused_orgs={"orgA"})
        diff = make_diff(source=ai_codemod_source(), created_at=NOW)
        decision = run_ace(
            diff, default_policy, keeper_with(), DrsEngine(default_policy.drs), _FixedBackend(), pause
        )
        assert decision.reasons == (ReasonCode.PAUSED,)

    def test_cap_admission_enforced_across_calls(self, default_policy):
        from dataclasses import replace

        policy = PolicySet(
            runbooks={
                "cleanup_dead_code": replace(
                    default_policy.runbooks["cleanup_dead_code"], daily_cap=3
                )
            },
            approved_codemods=default_policy.approved_codemods,
        )
        engine = warm_engine(policy)
        keeper = keeper_with(clean_ledger())
        outcomes = []
        for i in range(5):
            diff = _ScoredDiff.with_raw(
                policy, 1.0, id=f"D{i}", source=runbook_source("cleanup_dead_code"), created_at=NOW
            )
            decision = run_ace(diff, policy, keeper, engine, _FixedBackend())
            outcomes.append(decision.outcome)
        assert outcomes.count(Outcome.RADAR_LAND_SCHEDULED) == 3
        assert outcomes.count(Outcome.BLOCKED) == 2

    def test_conjunction_every_layer_must_pass(self, default_policy):
        """Flipping any single layer flips the outcome (stage-fault injection)."""
        engine_factory = lambda: warm_engine(default_policy)
        base = dict(source=runbook_source("cleanup_dead_code"), created_at=NOW)

        passing = _ScoredDiff.with_raw(default_policy, 1.0, **base)
        decision = run_ace(
            passing, default_policy, keeper_with(clean_ledger()), engine_factory(), _FixedBackend()
        )
        assert decision.outcome is Outcome.RADAR_LAND_SCHEDULED

        faults = {
            "eligibility": dict(base, source=runbook_source("unknown_runbook")),
            "scope": dict(base, scope=ScopeFlags(is_open_source=True)),
        }
        for name, overrides in faults.items():
            diff = _ScoredDiff.with_raw(default_policy, 1.0, **overrides)
            fault_decision = run_ace(
                diff,
                default_policy,
                keeper_with(clean_ledger()),
                engine_factory(),
                _FixedBackend(),
            )
            assert fault_decision.outcome is not Outcome.RADAR_LAND_SCHEDULED, name
        # DRS fault: raw far above the window.
        drs_fault = _ScoredDiff.with_raw(default_policy, 1000.0, **base)
        assert (
            run_ace(
                drs_fault,
                default_policy,
                keeper_with(clean_ledger()),
                engine_factory(),
                _FixedBackend(),
            ).outcome
            is Outcome.ROUTED_TO_HUMAN
        )
        # Agent fault.
        agent_fault = _ScoredDiff.with_raw(default_policy, 1.0, **base)
        assert (
            run_ace(
                agent_fault,
                default_policy,
                keeper_with(clean_ledger()),
                engine_factory(),
                _FixedBackend(safe=False),
            ).outcome
            is Outcome.ROUTED_TO_HUMAN
        )


class TestRunVerification:
    def test_clean_diff_verifies(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(default_policy, 3.0, created_at=NOW)
        decision = run_verification(diff, default_policy, engine, _FixedBackend())
        assert decision.outcome is Outcome.RADAR_VERIFIED_DEFERRED_REVIEW
        assert decision.rank == pytest.approx(0.035)

    def test_wip_fails_g1(self, default_policy):
        from radar.diffs import DiffStateFlags

        diff = make_diff(state=DiffStateFlags(is_wip=True), created_at=NOW)
        decision = run_verification(
            diff, default_policy, warm_engine(default_policy), _FixedBackend()
        )
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.stages[-1].stage is Stage.VERIFICATION_G1
        assert ReasonCode.WIP in decision.reasons
        assert decision.stage(Stage.VERIFICATION_G2) is None

    def test_blocklisted_phrase_fails_g2(self, default_policy):
        from dataclasses import replace
        from radar.policy import ContentBlocklists

        policy = replace(
            default_policy, blocklists=ContentBlocklists(phrase_blocklist=("DO NOT AUTOLAND",))
        )
        diff = make_diff(
            changes=(make_change(hunks=("-x()\n-y()  # DO NOT AUTOLAND",), added=0, removed=2),),
            created_at=NOW,
        )
        decision = run_verification(diff, policy, warm_engine(policy), _FixedBackend())
        assert decision.stages[-1].stage is Stage.VERIFICATION_G2
        assert decision.reasons == (ReasonCode.PHRASE,)

    def test_rank_006_fails_g3_at_p5(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(default_policy, 6.0, created_at=NOW)
        decision = run_verification(diff, default_policy, engine, _FixedBackend())
        assert decision.outcome is Outcome.ROUTED_TO_HUMAN
        assert decision.reasons == (ReasonCode.DRS_ABOVE_THRESHOLD,)

    def test_deferred_review_disabled_fails_g1(self, default_policy):
        from dataclasses import replace

        disabled = replace(default_policy.default_org, deferred_review_enabled=False)
        policy = replace(default_policy, default_org=disabled)
        decision = run_verification(
            make_diff(created_at=NOW), policy, warm_engine(policy), _FixedBackend()
        )
        assert ReasonCode.DEFERRED_REVIEW_DISABLED in decision.reasons


class TestRunApproval:
    def verified(self, policy, raw, confidence=10, effort=None) -> PipelineDecision:
        engine = warm_engine(policy)
        diff = _ScoredDiff.with_raw(policy, raw, created_at=NOW)
        decision = run_verification(diff, policy, engine, _FixedBackend(confidence=confidence))
        assert decision.outcome is Outcome.RADAR_VERIFIED_DEFERRED_REVIEW
        return decision

    def test_strict_pass_approves(self, default_policy):
        verified = self.verified(default_policy, raw=1.0)
        approved = run_approval(verified, default_policy, None, None)
        assert approved.outcome is Outcome.RADAR_APPROVED_NO_REVIEW
        assert approved.stage(Stage.APPROVAL).passed

    def test_rank_004_passes_p5_fails_p2(self, default_policy):
        verified = self.verified(default_policy, raw=4.0)
        assert verified.rank == pytest.approx(0.045)
        result = run_approval(verified, default_policy, None, None)
        assert result.outcome is Outcome.RADAR_VERIFIED_DEFERRED_REVIEW
        assert ReasonCode.APPROVAL_DRS in result.stage(Stage.APPROVAL).reasons

    def test_confidence_9_required(self, default_policy):
        verified = self.verified(default_policy, raw=1.0, confidence=8)
        result = run_approval(verified, default_policy, None, None)
        assert result.outcome is Outcome.RADAR_VERIFIED_DEFERRED_REVIEW
        assert ReasonCode.APPROVAL_CONFIDENCE in result.stage(Stage.APPROVAL).reasons

    def test_not_verified_input_raises(self, default_policy):
        routed = PipelineDecision("D1", Outcome.ROUTED_TO_HUMAN)
        with pytest.raises(NotVerified):
            run_approval(routed, default_policy, None, None)

    def test_approved_has_verified_trace(self, default_policy):
        approved = run_approval(self.verified(default_policy, 1.0), default_policy, None, None)
        assert all(
            approved.stage(stage).passed
            for stage in (Stage.VERIFICATION_G1, Stage.VERIFICATION_G2, Stage.VERIFICATION_G3)
        )


class TestDeferredLanding:
    def test_override_one_second_before_land(self):
        landing = DeferredLanding("D1", T0, T0 + 3600)
        process_override(landing, T0 + 3599)
        assert landing.status is LandingStatus.OVERRIDDEN

    def test_override_at_land_time_too_late(self):
        landing = DeferredLanding("D1", T0, T0 + 3600)
        with pytest.raises(TooLate):
            process_override(landing, T0 + 3600)
        assert landing.status is LandingStatus.PENDING

    def test_double_override_already_resolved(self):
        landing = DeferredLanding("D1", T0, T0 + 3600)
        process_override(landing, T0 + 10)
        with pytest.raises(AlreadyResolved):
            process_override(landing, T0 + 20)

    def test_landing_before_due_rejected(self):
        landing = DeferredLanding("D1", T0, T0 + 3600)
        with pytest.raises(NotDue):
            landing.mark_landed(T0 + 3599)
        landing.mark_landed(T0 + 3600)
        assert landing.status is LandingStatus.LANDED

    def test_landing_after_override_rejected(self):
        landing = DeferredLanding("D1", T0, T0 + 3600)
        process_override(landing, T0 + 1)
        with pytest.raises(AlreadyResolved):
            landing.mark_landed(T0 + 3600)


class TestAuthorAction:
    def _verified(self):
        return PipelineDecision("D1", Outcome.RADAR_VERIFIED_DEFERRED_REVIEW)

    def _approved(self):
        return PipelineDecision("D1", Outcome.RADAR_APPROVED_NO_REVIEW)

    def test_ship_verified_keeps_review_obligation(self):
        result = author_action(self._verified(), AuthorAction.SHIP)
        assert result.new_state == "LANDED" and result.deferred_review_required

    def test_ship_approved_waives_review(self):
        result = author_action(self._approved(), AuthorAction.SHIP)
        assert result.new_state == "LANDED" and not result.deferred_review_required

    def test_return_to_needs_review_voids(self):
        result = author_action(self._verified(), AuthorAction.RETURN_TO_NEEDS_REVIEW)
        assert result.new_state == "NEEDS_REVIEW"

    def test_ship_routed_is_invalid(self):
        with pytest.raises(InvalidState):
            author_action(PipelineDecision("D1", Outcome.ROUTED_TO_HUMAN), AuthorAction.SHIP)


class TestEvaluateDiff:
    def test_human_flows_to_approval(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(default_policy, 1.0, created_at=NOW)
        decision = evaluate_diff(
            diff, default_policy, keeper_with(), engine, _FixedBackend(), None, NOW
        )
        assert decision.outcome is Outcome.RADAR_APPROVED_NO_REVIEW

    def test_bot_flows_to_ace(self, default_policy):
        engine = warm_engine(default_policy)
        diff = _ScoredDiff.with_raw(
            default_policy, 1.0, source=runbook_source("cleanup_dead_code"), created_at=NOW
        )
        decision = evaluate_diff(
            diff, default_policy, keeper_with(clean_ledger()), engine, _FixedBackend(), None, NOW
        )
        assert decision.outcome is Outcome.RADAR_LAND_SCHEDULED

    def test_paused_human_diff(self, default_policy):
        pause = PauseControl(paused_orgs={"orgA"})
        decision = evaluate_diff(
            make_diff(created_at=NOW),
            default_policy,
            keeper_with(),
            warm_engine(default_policy),
            _FixedBackend(),
            pause,
            NOW,
        )
        assert decision.reasons == (ReasonCode.PAUSED,)
