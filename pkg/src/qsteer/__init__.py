"""qsteer: learned single-rule-flip steering for a rule-based query optimizer.

The package bundles a miniature rule optimizer, a ground-truth cluster
simulator with calibrated variance, a synthetic recurring-job workload, and
the offline pipeline that logs uniform rule flips, learns a contextual-bandit
hint policy over optimizer cost estimates, validates candidates by flighting,
and emits per-template hints.
"""

from .catalog import (
    CatalogError,
    Flip,
    Rule,
    RuleCatalog,
    RuleCategory,
    RuleConfig,
    RuleSignature,
    apply_flip,
    default_catalog,
    load_catalog,
    save_catalog,
)
from .optimizer import CompileError, OptimizedPlan, compile
from .executor import ExecResult, NoiseModel, RunMetrics, execute_job, true_pn_hours
from .workload import (
    ViewRecord,
    WorkloadSpec,
    generate_workload,
    read_view,
    write_view,
    write_workload_files,
)
from .span import SpanResult, brute_force_affecting_rules, compute_span
from .features import JobFeatures, build_super_root, featurize_action, featurize_context
from .bandit import (
    DecisionRecord,
    LearnConfig,
    Policy,
    decide,
    ips_policy_value,
    ips_uniform_value,
    learn,
    reward_from_costs,
)
from .flightsim import FlightBudget, FlightRecord, aa_run, flight, recompile_and_prune, select_flights
from .validation import (
    FlightSample,
    ValidationModel,
    gate,
    predict_pn_delta,
    train_validation_model,
)
from .pipeline import (
    CampaignConfig,
    DayReport,
    HintEntry,
    end_to_end_oracle_gap,
    parse_hints,
    run_campaign,
    run_day,
    run_day_core,
    write_hints,
)

__version__ = "0.1.0"

__all__ = [
    "CatalogError",
    "Flip",
    "Rule",
    "RuleCatalog",
    "RuleCategory",
    "RuleConfig",
    "RuleSignature",
    "apply_flip",
    "default_catalog",
    "load_catalog",
    "save_catalog",
    "CompileError",
    "OptimizedPlan",
    "compile",
    "ExecResult",
    "NoiseModel",
    "RunMetrics",
    "execute_job",
    "true_pn_hours",
    "ViewRecord",
    "WorkloadSpec",
    "generate_workload",
    "read_view",
    "write_view",
    "write_workload_files",
    "SpanResult",
    "brute_force_affecting_rules",
    "compute_span",
    "JobFeatures",
    "build_super_root",
    "featurize_action",
    "featurize_context",
    "DecisionRecord",
    "LearnConfig",
    "Policy",
    "decide",
    "ips_policy_value",
    "ips_uniform_value",
    "learn",
    "reward_from_costs",
    "FlightBudget",
    "FlightRecord",
    "aa_run",
    "flight",
    "recompile_and_prune",
    "select_flights",
    "FlightSample",
    "ValidationModel",
    "gate",
    "predict_pn_delta",
    "train_validation_model",
    "CampaignConfig",
    "DayReport",
    "HintEntry",
    "end_to_end_oracle_gap",
    "parse_hints",
    "run_campaign",
    "run_day",
    "run_day_core",
    "write_hints",
]
