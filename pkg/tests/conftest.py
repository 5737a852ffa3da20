"""Shared fixtures: compact builders for diffs, authors, and policies."""

from __future__ import annotations

import pytest

from radar.diffs import (
    AuthorProfile,
    ChangeUnit,
    CiState,
    Diff,
    DiffStateFlags,
    Role,
    ScopeFlags,
    SourceKind,
    SourceType,
)
from radar.policy import PolicySet, RunbookPolicy

T0 = 1_704_067_200  # 2024-01-01 00:00 UTC


def make_author(**overrides) -> AuthorProfile:
    base = dict(
        id="u1",
        role=Role.SWE,
        employment_days=400,
        diffs_committed_past_year=42,
        has_oncall=True,
    )
    base.update(overrides)
    return AuthorProfile(**base)


def make_change(
    path="core/util.py", added=3, removed=2, hunks=("+x = 1\n-x=1",)
) -> ChangeUnit:
    return ChangeUnit(path=path, lines_added=added, lines_removed=removed, hunk_texts=tuple(hunks))


def make_diff(**overrides) -> Diff:
    base = dict(
        id="D1",
        author=make_author(),
        source=SourceKind(SourceType.HUMAN),
        org="orgA",
        state=DiffStateFlags(),
        changes=(make_change(),),
        created_at=T0,
        scope=ScopeFlags(),
        content_text="",
    )
    base.update(overrides)
    return Diff(**base)


def human_source() -> SourceKind:
    return SourceKind(SourceType.HUMAN)


def runbook_source(name="cleanup_dead_code") -> SourceKind:
    return SourceKind(SourceType.RACER_RUNBOOK, name)


def ai_codemod_source(name="ai_fixer") -> SourceKind:
    return SourceKind(SourceType.AI_CODEMOD, name)


def det_codemod_source(name="import_sort_v2") -> SourceKind:
    return SourceKind(SourceType.DETERMINISTIC_CODEMOD, name)


@pytest.fixture
def default_policy() -> PolicySet:
    return PolicySet(
        runbooks={
            "cleanup_dead_code": RunbookPolicy("cleanup_dead_code", allowlisted=True, daily_cap=100),
            "lint_autofix": RunbookPolicy("lint_autofix", daily_cap=100),
        },
        approved_codemods=frozenset({"import_sort_v2"}),
    )
