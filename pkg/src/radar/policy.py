"""Policy configuration: org risk appetite, runbook settings, blocklists, delays.

The config document is TOML (reference encoding) with sections ``[global]``,
``[org.<id>]``, ``[runbook.<name>]``, ``[blocklists]``, ``[drs]``, ``[acr]``
and ``[approval]``; JSON with the same nesting is accepted as an alternate
encoding. Unspecified fields take the documented defaults. A loaded PolicySet
is immutable; hot reload replaces the whole snapshot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

try:  # tomllib landed in 3.11; tomli is the same parser for 3.10
    import tomllib as _toml
except ImportError:  # pragma: no cover - depends on interpreter version
    import tomli as _toml  # type: ignore[no-redef]

from .diffs import CiState, SourceKind, SourceType
from .errors import InputError


class ConfigError(InputError):
    pass


class ParseError(ConfigError):
    pass


class InvariantViolation(ConfigError):
    """A config value breaks a documented invariant. ``key`` names the offender."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class Bypass:
    """Sentinel: DRS gating is bypassed for this diff (compare with ``is BYPASS``)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "BYPASS"


BYPASS = Bypass()


@dataclass(frozen=True, slots=True)
class PxThreshold:
    """Percentile gate: PX admits only the lowest-risk X% of diffs.

    x=0 means nothing passes, x=100 means everything passes.
    """

    x: int

    def __post_init__(self):
        if not 0 <= self.x <= 100:
            raise InvariantViolation("drs_threshold", f"PX must be in [0,100], got {self.x}")

    @property
    def fraction(self) -> float:
        return self.x / 100.0


ALL_SOURCE_TYPES = frozenset(SourceType)


@dataclass(frozen=True, slots=True)
class OrgPolicy:
    org_id: str = "global"
    human_drs_threshold: PxThreshold = PxThreshold(5)
    bot_default_drs_threshold: PxThreshold = PxThreshold(20)
    allowlisted_runbook_drs_threshold: PxThreshold = PxThreshold(50)
    bot_drs_bypass: bool = False
    deferred_review_enabled: bool = True
    permitted_sources: frozenset[SourceType] = ALL_SOURCE_TYPES
    landing_delay_seconds: int = 3600

    def __post_init__(self):
        if self.landing_delay_seconds < 0:
            raise InvariantViolation(
                f"org.{self.org_id}.landing_delay_seconds", "must be >= 0"
            )


MAX_DAILY_CAP = 2000


@dataclass(frozen=True, slots=True)
class RunbookPolicy:
    runbook_name: str
    allowlisted: bool = False
    denylisted: bool = False
    daily_cap: int = 10
    min_landed_for_eligibility: int = 50
    max_revert_rate: float = 0.01
    max_rejection_rate: float = 0.05
    lookback_days: int = 60

    def __post_init__(self):
        key = f"runbook.{self.runbook_name}"
        if not 1 <= self.daily_cap <= MAX_DAILY_CAP:
            raise InvariantViolation(
                f"{key}.daily_cap", f"must be in [1,{MAX_DAILY_CAP}], got {self.daily_cap}"
            )
        if self.allowlisted and self.denylisted:
            raise InvariantViolation(key, "cannot be both allowlisted and denylisted")
        if self.min_landed_for_eligibility < 1:
            raise InvariantViolation(f"{key}.min_landed_for_eligibility", "must be >= 1")
        if not 0.0 <= self.max_revert_rate <= 1.0:
            raise InvariantViolation(f"{key}.max_revert_rate", "must be in [0,1]")
        if not 0.0 <= self.max_rejection_rate <= 1.0:
            raise InvariantViolation(f"{key}.max_rejection_rate", "must be in [0,1]")
        if self.lookback_days < 1:
            raise InvariantViolation(f"{key}.lookback_days", "must be >= 1")


@dataclass(frozen=True, slots=True)
class ContentBlocklists:
    phrase_blocklist: tuple[str, ...] = ()
    path_suffix_blocklist: tuple[str, ...] = ()
    path_prefix_blocklist: tuple[str, ...] = ()
    runbook_keyword_denylist: tuple[str, ...] = ("test",)

    def __post_init__(self):
        for name in (
            "phrase_blocklist",
            "path_suffix_blocklist",
            "path_prefix_blocklist",
            "runbook_keyword_denylist",
        ):
            entries = tuple(getattr(self, name))
            object.__setattr__(self, name, entries)
            if any(not isinstance(e, str) or not e for e in entries):
                raise InvariantViolation(f"blocklists.{name}", "entries must be non-empty strings")


# Default linear-scorer weights, in FeatureVector field order:
# (total_lines_changed, file_count, max_file_lines, distinct_top_level_dirs,
#  author_diffs_past_year, author_is_bot, touches_config_path, hour_of_day).
# Larger, wider, config-touching, low-tenure changes score higher.
DEFAULT_DRS_WEIGHTS = (0.004, 0.15, 0.003, 0.2, -0.0004, 0.0, 1.3, 0.01)

DEFAULT_CONFIG_PATH_PATTERNS = (
    "config/",
    "conf/",
    ".cfg",
    ".ini",
    ".toml",
    ".yaml",
    ".yml",
    ".properties",
)


@dataclass(frozen=True, slots=True)
class DrsConfig:
    weights: tuple[float, ...] = DEFAULT_DRS_WEIGHTS
    bias: float = 0.0
    min_calibration: int = 100
    window_capacity: int = 5000
    config_path_patterns: tuple[str, ...] = DEFAULT_CONFIG_PATH_PATTERNS

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "config_path_patterns", tuple(self.config_path_patterns))
        if len(self.weights) != 8:
            raise InvariantViolation("drs.weights", f"expected 8 weights, got {len(self.weights)}")
        if self.min_calibration < 1:
            raise InvariantViolation("drs.min_calibration", "must be >= 1")
        if self.window_capacity < 1:
            raise InvariantViolation("drs.window_capacity", "must be >= 1")


@dataclass(frozen=True, slots=True)
class AcrConfig:
    backend: str = "rules"  # "rules" | "external"
    endpoint: str = ""  # host:port for the external backend
    timeout_ms: int = 2000
    max_in_flight: int = 8
    effort_size_breakpoints: tuple[int, ...] = (10, 50, 200, 1000)
    effort_file_breakpoints: tuple[int, ...] = (2, 5, 10, 25)
    mixed_safe_kinds_penalty: int = 1
    many_files_penalty: int = 1
    many_files_threshold: int = 10
    # Per-signal pattern overrides; defaults live in radar.agent.
    patterns: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.backend not in ("rules", "external"):
            raise InvariantViolation("acr.backend", f"must be 'rules' or 'external', got {self.backend!r}")
        if self.backend == "external" and not self.endpoint:
            raise InvariantViolation("acr.endpoint", "required when backend='external'")
        for name in ("effort_size_breakpoints", "effort_file_breakpoints"):
            bps = tuple(getattr(self, name))
            object.__setattr__(self, name, bps)
            if len(bps) != 4 or list(bps) != sorted(bps):
                raise InvariantViolation(f"acr.{name}", "must be 4 ascending breakpoints")
        object.__setattr__(
            self, "patterns", {k: tuple(v) for k, v in dict(self.patterns).items()}
        )


@dataclass(frozen=True, slots=True)
class ApprovalConfig:
    # The stricter post-verification gate; must not be looser than verification.
    drs_threshold: PxThreshold = PxThreshold(2)
    min_confidence: int = 9
    max_effort: int = 2

    def __post_init__(self):
        if not 0 <= self.min_confidence <= 10:
            raise InvariantViolation("approval.min_confidence", "must be in [0,10]")
        if not 1 <= self.max_effort <= 5:
            raise InvariantViolation("approval.max_effort", "must be in [1,5]")


@dataclass(frozen=True, slots=True)
class PolicySet:
    default_org: OrgPolicy = OrgPolicy()
    orgs: Mapping[str, OrgPolicy] = field(default_factory=dict)
    runbooks: Mapping[str, RunbookPolicy] = field(default_factory=dict)
    blocklists: ContentBlocklists = ContentBlocklists()
    drs: DrsConfig = DrsConfig()
    acr: AcrConfig = AcrConfig()
    approval: ApprovalConfig = ApprovalConfig()
    approved_codemods: frozenset[str] = frozenset()
    allowed_ci_states: frozenset[CiState] = frozenset({CiState.PASSING})

    def __post_init__(self):
        object.__setattr__(self, "orgs", dict(self.orgs))
        object.__setattr__(self, "runbooks", dict(self.runbooks))
        object.__setattr__(self, "approved_codemods", frozenset(self.approved_codemods))
        object.__setattr__(self, "allowed_ci_states", frozenset(self.allowed_ci_states))

    def org_policy(self, org_id: str) -> OrgPolicy:
        """Per-org policy, falling back to the single global default."""
        return self.orgs.get(org_id, self.default_org)

    def runbook_policy(self, runbook_name: str) -> RunbookPolicy:
        """Per-runbook policy; unknown runbooks get the conservative defaults."""
        rp = self.runbooks.get(runbook_name)
        if rp is None:
            rp = RunbookPolicy(runbook_name=runbook_name)
        return rp


def resolve_threshold(policy: PolicySet, org: str, source: SourceKind):
    """DRS threshold for a (org, source) pair: a PxThreshold or BYPASS.

    Humans get the org's human threshold. Deterministic codemods are never
    DRS-gated. Any bot source bypasses when the org opted into bot_drs_bypass.
    Allowlisted runbooks get the relaxed threshold (P50 default); everything
    else gets the stricter bot default (P20 default).
    """
    op = policy.org_policy(org)
    if source.kind is SourceType.HUMAN:
        return op.human_drs_threshold
    if op.bot_drs_bypass:
        return BYPASS
    if source.kind is SourceType.DETERMINISTIC_CODEMOD:
        return BYPASS
    if source.kind is SourceType.RACER_RUNBOOK:
        if policy.runbook_policy(source.name).allowlisted:
            return op.allowlisted_runbook_drs_threshold
        return op.bot_default_drs_threshold
    return op.bot_default_drs_threshold


# --- loading -----------------------------------------------------------------

_ORG_KEYS = {
    "human_drs_threshold",
    "bot_default_drs_threshold",
    "allowlisted_runbook_drs_threshold",
    "bot_drs_bypass",
    "deferred_review_enabled",
    "permitted_sources",
    "landing_delay_seconds",
}
_GLOBAL_ONLY_KEYS = {"approved_codemods", "allowed_ci_states"}
_RUNBOOK_KEYS = {
    "allowlisted",
    "denylisted",
    "daily_cap",
    "min_landed_for_eligibility",
    "max_revert_rate",
    "max_rejection_rate",
    "lookback_days",
}
_BLOCKLIST_KEYS = {
    "phrase_blocklist",
    "path_suffix_blocklist",
    "path_prefix_blocklist",
    "runbook_keyword_denylist",
}
_DRS_KEYS = {"weights", "bias", "min_calibration", "window_capacity", "config_path_patterns"}
_ACR_KEYS = {
    "backend",
    "endpoint",
    "timeout_ms",
    "max_in_flight",
    "effort_size_breakpoints",
    "effort_file_breakpoints",
    "mixed_safe_kinds_penalty",
    "many_files_penalty",
    "many_files_threshold",
    "patterns",
}
_APPROVAL_KEYS = {"drs_threshold", "min_confidence", "max_effort"}


def _reject_unknown(section: Mapping[str, Any], allowed: set, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise InvariantViolation(f"{where}.{key}", "unknown key")


def _px(value: Any, key: str) -> PxThreshold:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvariantViolation(key, f"threshold must be an integer percent, got {value!r}")
    if not 0 <= value <= 100:
        raise InvariantViolation(key, f"must be in [0,100], got {value}")
    return PxThreshold(value)


def _parse_sources(raw: Any, key: str) -> frozenset[SourceType]:
    if isinstance(raw, str) or not hasattr(raw, "__iter__"):
        raise InvariantViolation(key, "expected a list of source kinds")
    out = set()
    for entry in raw:
        try:
            out.add(SourceType(entry))
        except ValueError:
            raise InvariantViolation(key, f"unknown source kind {entry!r}")
    return frozenset(out)


def _parse_org(org_id: str, section: Mapping[str, Any], where: str) -> OrgPolicy:
    _reject_unknown(section, _ORG_KEYS | (_GLOBAL_ONLY_KEYS if where == "global" else set()), where)
    kwargs: dict[str, Any] = {"org_id": org_id}
    for key in ("human_drs_threshold", "bot_default_drs_threshold", "allowlisted_runbook_drs_threshold"):
        if key in section:
            kwargs[key] = _px(section[key], f"{where}.{key}")
    for key in ("bot_drs_bypass", "deferred_review_enabled"):
        if key in section:
            kwargs[key] = bool(section[key])
    if "permitted_sources" in section:
        kwargs["permitted_sources"] = _parse_sources(
            section["permitted_sources"], f"{where}.permitted_sources"
        )
    if "landing_delay_seconds" in section:
        try:
            kwargs["landing_delay_seconds"] = int(section["landing_delay_seconds"])
        except (TypeError, ValueError) as exc:
            raise InvariantViolation(f"{where}.landing_delay_seconds", str(exc))
    return OrgPolicy(**kwargs)


def _build(where: str, factory, kwargs: Mapping[str, Any]):
    # Bad value types surface as InvariantViolation naming the section, so the
    # CLI treats them as input errors rather than crashes.
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(where, str(exc))


def _parse_runbook(name: str, section: Mapping[str, Any]) -> RunbookPolicy:
    where = f"runbook.{name}"
    _reject_unknown(section, _RUNBOOK_KEYS, where)
    kwargs: dict[str, Any] = {}
    try:
        for key in ("daily_cap", "min_landed_for_eligibility", "lookback_days"):
            if key in section:
                kwargs[key] = int(section[key])
        for key in ("max_revert_rate", "max_rejection_rate"):
            if key in section:
                kwargs[key] = float(section[key])
        for key in ("allowlisted", "denylisted"):
            if key in section:
                kwargs[key] = bool(section[key])
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(where, str(exc))
    return RunbookPolicy(runbook_name=name, **kwargs)


def load_policy(text: str) -> PolicySet:
    """Parse and validate a policy document (TOML reference encoding, or JSON)."""
    stripped = text.lstrip()
    try:
        if stripped.startswith("{"):
            doc = json.loads(text)
        else:
            doc = _toml.loads(text)
    except (json.JSONDecodeError, _toml.TOMLDecodeError) as exc:
        raise ParseError(f"config document does not parse: {exc}")
    if not isinstance(doc, dict):
        raise ParseError("config document must be a table/object at the top level")
    return policy_from_dict(doc)


def _require_table(value: Any, where: str) -> dict:
    if not isinstance(value, Mapping):
        raise InvariantViolation(where, f"expected a table/object, got {type(value).__name__}")
    return dict(value)


def policy_from_dict(doc: Mapping[str, Any]) -> PolicySet:
    _reject_unknown(dict(doc), {"global", "org", "runbook", "blocklists", "drs", "acr", "approval"}, "top-level")
    for name in ("global", "org", "runbook", "blocklists", "drs", "acr", "approval"):
        if name in doc:
            _require_table(doc[name], name)

    global_section = dict(doc.get("global", {}))
    approved_raw = global_section.pop("approved_codemods", ())
    if isinstance(approved_raw, str) or not hasattr(approved_raw, "__iter__"):
        raise InvariantViolation("global.approved_codemods", "expected a list of codemod ids")
    approved = frozenset(str(c) for c in approved_raw)
    ci_raw = global_section.pop("allowed_ci_states", ["PASSING"])
    if isinstance(ci_raw, str) or not hasattr(ci_raw, "__iter__"):
        raise InvariantViolation("global.allowed_ci_states", "expected a list of CI states")
    ci_states = set()
    for raw in ci_raw:
        try:
            ci_states.add(CiState(raw))
        except ValueError:
            raise InvariantViolation("global.allowed_ci_states", f"unknown CI state {raw!r}")
    default_org = _parse_org("global", global_section, "global")

    orgs = {}
    for org_id, section in dict(doc.get("org", {})).items():
        section = _require_table(section, f"org.{org_id}")
        base = _parse_org(org_id, section, f"org.{org_id}")
        # Org sections override the global defaults field-by-field.
        kwargs = {}
        for fname in _ORG_KEYS:
            if fname in section:
                kwargs[fname] = getattr(base, fname)
        orgs[org_id] = replace(default_org, org_id=org_id, **kwargs)

    runbooks = {
        name: _parse_runbook(name, _require_table(section, f"runbook.{name}"))
        for name, section in dict(doc.get("runbook", {})).items()
    }

    bl_section = dict(doc.get("blocklists", {}))
    _reject_unknown(bl_section, _BLOCKLIST_KEYS, "blocklists")
    bl_kwargs = {}
    for key, value in bl_section.items():
        if isinstance(value, str) or not hasattr(value, "__iter__"):
            raise InvariantViolation(f"blocklists.{key}", "expected a list of strings")
        bl_kwargs[key] = tuple(value)
    blocklists = _build("blocklists", ContentBlocklists, bl_kwargs)

    drs_section = dict(doc.get("drs", {}))
    _reject_unknown(drs_section, _DRS_KEYS, "drs")
    drs = _build("drs", DrsConfig, drs_section)

    acr_section = dict(doc.get("acr", {}))
    _reject_unknown(acr_section, _ACR_KEYS, "acr")
    acr = _build("acr", AcrConfig, acr_section)

    approval_section = dict(doc.get("approval", {}))
    _reject_unknown(approval_section, _APPROVAL_KEYS, "approval")
    if "drs_threshold" in approval_section:
        approval_section["drs_threshold"] = _px(
            approval_section["drs_threshold"], "approval.drs_threshold"
        )
    approval = _build("approval", ApprovalConfig, approval_section)

    return PolicySet(
        default_org=default_org,
        orgs=orgs,
        runbooks=runbooks,
        blocklists=blocklists,
        drs=drs,
        acr=acr,
        approval=approval,
        approved_codemods=approved,
        allowed_ci_states=frozenset(ci_states),
    )


def policy_to_dict(policy: PolicySet) -> dict[str, Any]:
    """Serialize a PolicySet back to the config-document shape (round-trips)."""

    def org_section(op: OrgPolicy) -> dict[str, Any]:
        return {
            "human_drs_threshold": op.human_drs_threshold.x,
            "bot_default_drs_threshold": op.bot_default_drs_threshold.x,
            "allowlisted_runbook_drs_threshold": op.allowlisted_runbook_drs_threshold.x,
            "bot_drs_bypass": op.bot_drs_bypass,
            "deferred_review_enabled": op.deferred_review_enabled,
            "permitted_sources": sorted(s.value for s in op.permitted_sources),
            "landing_delay_seconds": op.landing_delay_seconds,
        }

    doc: dict[str, Any] = {"global": org_section(policy.default_org)}
    doc["global"]["approved_codemods"] = sorted(policy.approved_codemods)
    doc["global"]["allowed_ci_states"] = sorted(s.value for s in policy.allowed_ci_states)
    if policy.orgs:
        doc["org"] = {org_id: org_section(op) for org_id, op in sorted(policy.orgs.items())}
    if policy.runbooks:
        doc["runbook"] = {
            name: {
                "allowlisted": rp.allowlisted,
                "denylisted": rp.denylisted,
                "daily_cap": rp.daily_cap,
                "min_landed_for_eligibility": rp.min_landed_for_eligibility,
                "max_revert_rate": rp.max_revert_rate,
                "max_rejection_rate": rp.max_rejection_rate,
                "lookback_days": rp.lookback_days,
            }
            for name, rp in sorted(policy.runbooks.items())
        }
    doc["blocklists"] = {
        "phrase_blocklist": list(policy.blocklists.phrase_blocklist),
        "path_suffix_blocklist": list(policy.blocklists.path_suffix_blocklist),
        "path_prefix_blocklist": list(policy.blocklists.path_prefix_blocklist),
        "runbook_keyword_denylist": list(policy.blocklists.runbook_keyword_denylist),
    }
    doc["drs"] = {
        "weights": list(policy.drs.weights),
        "bias": policy.drs.bias,
        "min_calibration": policy.drs.min_calibration,
        "window_capacity": policy.drs.window_capacity,
        "config_path_patterns": list(policy.drs.config_path_patterns),
    }
    doc["acr"] = {
        "backend": policy.acr.backend,
        "endpoint": policy.acr.endpoint,
        "timeout_ms": policy.acr.timeout_ms,
        "max_in_flight": policy.acr.max_in_flight,
        "effort_size_breakpoints": list(policy.acr.effort_size_breakpoints),
        "effort_file_breakpoints": list(policy.acr.effort_file_breakpoints),
        "mixed_safe_kinds_penalty": policy.acr.mixed_safe_kinds_penalty,
        "many_files_penalty": policy.acr.many_files_penalty,
        "many_files_threshold": policy.acr.many_files_threshold,
        "patterns": {k: list(v) for k, v in sorted(policy.acr.patterns.items())},
    }
    doc["approval"] = {
        "drs_threshold": policy.approval.drs_threshold.x,
        "min_confidence": policy.approval.min_confidence,
        "max_effort": policy.approval.max_effort,
    }
    return doc
