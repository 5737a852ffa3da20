"""Policy loading, defaults, invariants, threshold resolution, round-trips."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

from radar.diffs import SourceType
from radar.policy import (
    BYPASS,
    InvariantViolation,
    ParseError,
    PolicySet,
    PxThreshold,
    RunbookPolicy,
    load_policy,
    policy_from_dict,
    policy_to_dict,
    resolve_threshold,
)

from conftest import ai_codemod_source, det_codemod_source, human_source, runbook_source


class TestDefaults:
    def test_empty_document_gives_paper_defaults(self):
        policy = load_policy("")
        assert policy.default_org.human_drs_threshold == PxThreshold(5)
        assert policy.default_org.bot_default_drs_threshold == PxThreshold(20)
        assert policy.default_org.allowlisted_runbook_drs_threshold == PxThreshold(50)
        assert policy.default_org.landing_delay_seconds == 3600

    def test_empty_org_section_gives_human_p5(self):
        policy = load_policy("[org.orgZ]\n")
        assert policy.org_policy("orgZ").human_drs_threshold == PxThreshold(5)

    def test_runbook_defaults(self):
        rp = PolicySet().runbook_policy("anything")
        assert rp.daily_cap == 10
        assert rp.min_landed_for_eligibility == 50
        assert rp.max_revert_rate == 0.01
        assert rp.max_rejection_rate == 0.05
        assert rp.lookback_days == 60

    def test_keyword_denylist_default_contains_test(self):
        assert "test" in PolicySet().blocklists.runbook_keyword_denylist


class TestInvariants:
    def test_daily_cap_over_2000_rejected(self):
        with pytest.raises(InvariantViolation) as err:
            load_policy("[runbook.big]\ndaily_cap = 5000\n")
        assert "daily_cap" in str(err.value)

    def test_allow_and_deny_contradiction_rejected(self):
        with pytest.raises(InvariantViolation):
            load_policy("[runbook.r]\nallowlisted = true\ndenylisted = true\n")

    def test_threshold_out_of_range_rejected(self):
        with pytest.raises(InvariantViolation):
            load_policy("[global]\nhuman_drs_threshold = 101\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(InvariantViolation) as err:
            load_policy("[global]\nmystery_knob = 1\n")
        assert "mystery_knob" in str(err.value)

    def test_unparseable_document_rejected(self):
        with pytest.raises(ParseError):
            load_policy("this is [not toml")

    def test_px_threshold_bounds(self):
        with pytest.raises(InvariantViolation):
            PxThreshold(-1)
        with pytest.raises(InvariantViolation):
            PxThreshold(101)


class TestResolveThreshold:
    def test_human_gets_p5(self):
        assert resolve_threshold(PolicySet(), "orgA", human_source()) == PxThreshold(5)

    def test_allowlisted_runbook_gets_p50(self, default_policy):
        t = resolve_threshold(default_policy, "orgA", runbook_source("cleanup_dead_code"))
        assert t == PxThreshold(50)

    def test_non_allowlisted_runbook_gets_p20(self, default_policy):
        t = resolve_threshold(default_policy, "orgA", runbook_source("lint_autofix"))
        assert t == PxThreshold(20)

    def test_ai_codemod_gets_p20(self):
        assert resolve_threshold(PolicySet(), "orgA", ai_codemod_source()) == PxThreshold(20)

    def test_deterministic_codemod_bypasses(self):
        assert resolve_threshold(PolicySet(), "orgA", det_codemod_source()) is BYPASS

    def test_org_bypass_covers_any_bot(self):
        policy = load_policy("[org.orgA]\nbot_drs_bypass = true\n")
        assert resolve_threshold(policy, "orgA", runbook_source()) is BYPASS
        assert resolve_threshold(policy, "orgA", ai_codemod_source()) is BYPASS
        # Humans are never bypassed.
        assert resolve_threshold(policy, "orgA", human_source()) == PxThreshold(5)

    def test_unknown_org_uses_global_default(self):
        policy = load_policy("[global]\nbot_default_drs_threshold = 10\n")
        assert resolve_threshold(policy, "nowhere", ai_codemod_source()) == PxThreshold(10)


class TestRoundTrip:
    def test_toml_and_json_encodings_agree(self):
        toml_text = """
[global]
human_drs_threshold = 7
approved_codemods = ["import_sort_v2"]

[org.orgB]
bot_drs_bypass = true

[runbook.cleanup]
allowlisted = true
daily_cap = 250

[blocklists]
phrase_blocklist = ["DO NOT AUTOLAND"]

[drs]
min_calibration = 50

[approval]
drs_threshold = 3
"""
        from_toml = load_policy(toml_text)
        from_json = load_policy(json.dumps(policy_to_dict(from_toml)))
        assert from_json == from_toml

    def test_dict_round_trip_equality(self, default_policy):
        assert policy_from_dict(policy_to_dict(default_policy)) == default_policy

    def test_org_section_overrides_global_defaults(self):
        policy = load_policy(
            "[global]\nlanding_delay_seconds = 100\n[org.orgC]\nbot_drs_bypass = true\n"
        )
        org = policy.org_policy("orgC")
        assert org.bot_drs_bypass is True
        assert org.landing_delay_seconds == 100  # inherited from [global]


_FUZZ_SCALARS = st.one_of(
    st.none(), st.booleans(), st.integers(-5, 5000), st.floats(-2, 2, allow_nan=False), st.text(max_size=8)
)
_FUZZ_DOCS = st.recursive(
    _FUZZ_SCALARS,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(
            st.sampled_from(
                [
                    "global", "org", "runbook", "blocklists", "drs", "acr", "approval",
                    "daily_cap", "weights", "human_drs_threshold", "permitted_sources",
                    "phrase_blocklist", "allowlisted", "denylisted", "backend", "orgX",
                    "approved_codemods", "allowed_ci_states", "min_calibration",
                ]
            ),
            children,
            max_size=4,
        ),
    ),
    max_leaves=12,
)


class TestRobustness:
    """Arbitrary JSON-shaped documents either load or raise ConfigError, never crash."""

    @settings(max_examples=75)
    @given(_FUZZ_DOCS)
    def test_load_policy_never_crashes(self, doc):
        from radar.errors import InputError
        from radar.policy import PolicySet, load_policy

        try:
            policy = load_policy(json.dumps(doc))
        except InputError:
            return
        assert isinstance(policy, PolicySet)


class TestAcrConfig:
    def test_external_backend_requires_endpoint(self):
        with pytest.raises(InvariantViolation):
            load_policy('[acr]\nbackend = "external"\n')

    def test_sources_parse(self):
        policy = load_policy('[global]\npermitted_sources = ["human", "racer_runbook"]\n')
        assert policy.default_org.permitted_sources == frozenset(
            {SourceType.HUMAN, SourceType.RACER_RUNBOOK}
        )
        with pytest.raises(InvariantViolation):
            load_policy('[global]\npermitted_sources = ["martian"]\n')
