"""RADAR: a risk-aware diff auto-review and auto-landing funnel.

The package is organized around the funnel's moving parts:

- ``diffs``        -- the diff data model, authorship classification, record validation
- ``policy``       -- org/runbook policy configuration and DRS threshold resolution
- ``risk``         -- diff risk scoring, empirical percentile calibration, PX gating
- ``agent``        -- the review agent: safe/risk signal taxonomy and the accept rule
- ``eligibility``  -- the eligibility classification tree and runbook ledgers
- ``funnel``       -- the bot (ACE) and human (Verification/Approval) pipelines
- ``stats``        -- telemetry metrics, Fisher's exact test, rate ratios, DiD
- ``sim``          -- synthetic diff streams and the reproducible simulation harness
- ``eventlog``     -- the append-only decision/lifecycle log and replay
- ``cli``          -- the ``radar`` command-line entry point
"""

__version__ = "0.1.0"
