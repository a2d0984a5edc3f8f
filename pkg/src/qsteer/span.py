"""Job span: the set of flippable rules that can matter for a job.

The span is found with the fix-point heuristic: compile under the default
config, then repeatedly disable every non-required rule that fired (with all
off-by-default rules enabled) and recompile until no new rule fires or the
compilation fails. The exhaustive single-flip oracle is the ground truth the
heuristic is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

from .catalog import Flip, RuleCatalog, RuleCategory, RuleConfig, apply_flip, default_catalog
from . import optimizer
from .optimizer import CompileError, OptimizedPlan
from .relalg import Job


@dataclass(frozen=True)
class SpanResult:
    span: tuple[int, ...]  # sorted rule ids
    iterations: int  # recompilations after the default compile
    compile_calls: int
    default_plan: OptimizedPlan


def compute_span(
    job: Job,
    catalog: RuleCatalog | None = None,
    compile_fn=None,
    default_plan: OptimizedPlan | None = None,
) -> SpanResult:
    """Fix-point span search; terminates after at most B recompilations."""
    catalog = catalog or default_catalog()
    compile_fn = compile_fn or optimizer.compile
    required = set(catalog.ids_in(RuleCategory.REQUIRED))
    off_mask = 0
    for rid in catalog.ids_in(RuleCategory.OFF_BY_DEFAULT):
        off_mask |= 1 << rid

    calls = 0
    if default_plan is None:
        default_plan = compile_fn(job, catalog.default_config(), catalog)
        calls += 1
    span = set(default_plan.signature.ids()) - required
    # The first probe keeps every default-fired rule enabled so that rules
    # whose guards depend on them (an off-by-default rewrite firing only
    # after a pushdown, say) are still discoverable; subsequent probes
    # disable everything fired so far to surface replacements.
    disabled: set[int] = set()
    iterations = 0
    for _ in range(catalog.size):
        bits = catalog.default_mask | off_mask
        for rid in disabled:
            bits &= ~(1 << rid)
        try:
            plan = compile_fn(job, RuleConfig(bits, catalog.size), catalog)
        except CompileError:
            break
        calls += 1
        iterations += 1
        fired = set(plan.signature.ids()) - required
        new = fired - span
        span |= new
        if not new and disabled == span:
            break
        disabled = set(span)
    return SpanResult(tuple(sorted(span)), iterations, calls, default_plan)


def legal_flips(catalog: RuleCatalog) -> list[Flip]:
    """Every single-rule flip away from the default configuration."""
    flips = []
    for rule in catalog.rules:
        if rule.category is RuleCategory.REQUIRED:
            continue
        direction = "off" if catalog.default_state(rule.rule_id) else "on"
        flips.append(Flip(rule.rule_id, direction))
    return flips


def brute_force_affecting_rules(
    job: Job,
    catalog: RuleCatalog | None = None,
    compile_fn=None,
) -> tuple[int, ...]:
    """Rule ids whose single flip changes the plan DAG or breaks compilation.

    Exhaustive over the catalog; guarded to small catalogs because it costs
    one recompilation per non-required rule.
    """
    catalog = catalog or default_catalog()
    if catalog.size > 64:
        raise ValueError(f"oracle limited to B <= 64 rules, got {catalog.size}")
    compile_fn = compile_fn or optimizer.compile
    default = compile_fn(job, catalog.default_config(), catalog)
    base_fp = default.fingerprint()
    affecting = []
    for flip in legal_flips(catalog):
        config = apply_flip(catalog, catalog.default_config(), flip)
        try:
            plan = compile_fn(job, config, catalog)
        except CompileError:
            affecting.append(flip.rule_id)
            continue
        if plan.fingerprint() != base_fp:
            affecting.append(flip.rule_id)
    return tuple(affecting)


def span_recall(jobs, catalog: RuleCatalog | None = None) -> tuple[float, list[dict]]:
    """Micro-averaged recall of the heuristic span against the oracle."""
    catalog = catalog or default_catalog()
    hit = 0
    total = 0
    rows = []
    for job in jobs:
        span = set(compute_span(job, catalog).span)
        oracle = set(brute_force_affecting_rules(job, catalog))
        hit += len(span & oracle)
        total += len(oracle)
        rows.append(
            {
                "job_id": job.job_id,
                "span": tuple(sorted(span)),
                "oracle": tuple(sorted(oracle)),
                "missed": tuple(sorted(oracle - span)),
            }
        )
    return (hit / total if total else 1.0), rows
