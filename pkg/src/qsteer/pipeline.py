"""Daily orchestration: features, recommendation, recompilation, validation,
hint generation, plus the report and evaluation harnesses.

Each day is stateless: read the day's view, compute spans, log one uniform
decision per job (and one exploit recommendation when a policy exists), prune
by recompiled estimated cost, flight survivors under the budget, gate flight
successes with the validation model, and explode accepted flips into per
template hints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import optimizer
from .bandit import (
    DecisionRecord,
    LearnConfig,
    Policy,
    learn,
    write_decision_log,
)
from .catalog import Flip, RuleCatalog, RuleConfig, apply_flip, default_catalog
from .executor import NoiseModel, RunMetrics, execute_job, true_pn_hours
from .features import (
    JobFeatures,
    build_super_root,
    featurize_action,
    featurize_context,
)
from .flightsim import (
    FlightBudget,
    FlightCandidate,
    FlightRecord,
    PruneResult,
    QueueResult,
    Survivor,
    recompile_and_prune,
    run_flight_queue,
    select_flights,
)
from .hashing import combine, stable_hash
from .optimizer import CompileError, OptimizedPlan
from .relalg import Job
from .span import compute_span
from .validation import (
    FlightSample,
    ValidationModel,
    gate,
    samples_from_flights,
)
from .workload import ViewRecord, jobs_path_for, read_jobs, read_view

HINTS_HEADER = "# qo-advisor-hints v1"
REPORT_HEADER = "# qsteer-day-report v1"

# A hinted job counts as a latency regression when its measured latency grew
# by more than this fraction; smaller wobbles are indistinguishable from
# cluster variance.
# Paired replay shares the noise draw between arms, so any latency delta
# beyond a small deadband reflects the plan change itself.
LATENCY_REGRESSION_THRESHOLD = 0.02

_NS_DECIDE = stable_hash("pipeline-decide")
_NS_SELECT = stable_hash("pipeline-select")
_NS_EVAL = stable_hash("pipeline-eval")


@dataclass(frozen=True)
class HintEntry:
    template_id: str
    rule_id: int
    direction: str  # "on" | "off"

    def flip(self) -> Flip:
        return Flip(self.rule_id, self.direction)


def write_hints(entries: Sequence[HintEntry], path) -> None:
    seen = set()
    for e in entries:
        if e.template_id in seen:
            raise ValueError(f"duplicate hint for template {e.template_id}")
        seen.add(e.template_id)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HINTS_HEADER + "\n")
        for e in entries:
            fh.write(f"{e.template_id}\t{e.rule_id}\t{e.direction}\n")


def parse_hints(path) -> list[HintEntry]:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != HINTS_HEADER:
            raise ValueError(f"{path}: not a hints file (header {header!r})")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
            template_id, rule_s, direction = parts
            if direction not in ("on", "off"):
                raise ValueError(f"{path}:{lineno}: bad direction {direction!r}")
            if template_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate template {template_id}")
            seen.add(template_id)
            entries.append(HintEntry(template_id, int(rule_s), direction))
    return entries


def hinted_config(
    catalog: RuleCatalog, hints: dict[str, HintEntry], template_id: str
) -> RuleConfig:
    """Default config amended by the template's hint, if any."""
    config = catalog.default_config()
    entry = hints.get(template_id)
    if entry is None:
        return config
    return apply_flip(catalog, config, entry.flip())


def compile_with_hints(
    job: Job, hints: Sequence[HintEntry] | dict[str, HintEntry], catalog: RuleCatalog | None = None
) -> OptimizedPlan:
    catalog = catalog or default_catalog()
    if not isinstance(hints, dict):
        hints = {e.template_id: e for e in hints}
    return optimizer.compile(job, hinted_config(catalog, hints, job.template_id), catalog)


@dataclass
class DayReport:
    date: str
    mode: str
    counts: dict[str, int]
    aggregates: dict[str, float]  # fractional change per metric, hinted jobs
    deltas: dict[str, list[float]]  # sorted per-job fractional changes


@dataclass
class DayResult:
    report: DayReport
    hints: list[HintEntry]
    decisions: list[DecisionRecord]
    prune: PruneResult
    queue: QueueResult | None
    samples: list[FlightSample]
    features: dict[str, JobFeatures]
    spans: dict[str, tuple[int, ...]]


def _group_records(records: Sequence[ViewRecord]) -> dict[str, list[ViewRecord]]:
    grouped: dict[str, list[ViewRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.job_id, []).append(rec)
    return grouped


def report_metrics(
    pairs: Sequence[tuple[RunMetrics, RunMetrics]],
) -> tuple[dict[str, float], dict[str, list[float]]]:
    """Aggregate and per-job changes of treatment over baseline.

    Aggregate change per metric is (sum(treatment) - sum(baseline)) /
    sum(baseline); per-job changes are sorted ascending for plotting.
    """
    metrics = ("pn_hours", "latency_s", "total_vertices", "data_read", "data_written")
    aggregates: dict[str, float] = {}
    deltas: dict[str, list[float]] = {}
    for name in metrics:
        base = [getattr(b, name) for b, _ in pairs]
        treat = [getattr(t, name) for _, t in pairs]
        total = sum(base)
        aggregates[name] = (sum(treat) - total) / total if total > 0 else 0.0
        deltas[name] = sorted(
            (t - b) / b if b > 0 else 0.0 for b, t in zip(base, treat)
        )
    return aggregates, deltas


def run_day_core(
    jobs: Sequence[Job],
    records: Sequence[ViewRecord],
    policy: Policy | None,
    vmodel: ValidationModel | None,
    budget: FlightBudget,
    threshold: float,
    seed: int,
    mode: str,
    noise: NoiseModel | None = None,
    catalog: RuleCatalog | None = None,
    validation_enabled: bool = True,
    carried_hints: Sequence[HintEntry] = (),
) -> DayResult:
    """One pipeline day over in-memory inputs. Deterministic in seed.

    carried_hints are previously vetted entries still in force (the hint
    store); today's own acceptances override them per template.
    """
    if mode not in ("log", "exploit"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "exploit" and policy is None:
        raise ValueError("exploit mode requires a trained policy")
    catalog = catalog or default_catalog()
    noise = noise if noise is not None else NoiseModel()
    jobs_by_id = {job.job_id: job for job in jobs}
    grouped = _group_records(records)
    missing = [jid for jid in grouped if jid not in jobs_by_id]
    if missing:
        raise ValueError(f"view rows without job definitions: {missing[:3]}")
    date = jobs[0].date if jobs else ""

    # Feature generation.
    features: dict[str, JobFeatures] = {
        jid: build_super_root(rows) for jid, rows in grouped.items()
    }

    # Span computation; empty spans leave the pipeline here.
    spans: dict[str, tuple[int, ...]] = {}
    default_plans: dict[str, OptimizedPlan] = {}
    for jid in grouped:
        result = compute_span(jobs_by_id[jid], catalog)
        default_plans[jid] = result.default_plan
        if result.span:
            spans[jid] = result.span

    # Recommendation: one uniform logged decision per job, plus the exploit
    # recommendation when a policy is present (the doubled compilation).
    decisions: list[DecisionRecord] = []
    candidates: list[FlightCandidate] = []
    for jid in grouped:
        span = spans.get(jid)
        if not span:
            continue
        job = jobs_by_id[jid]
        feats = features[jid]
        context = featurize_context(feats, span)
        flips = [None] + [
            Flip(rid, "off" if catalog.default_state(rid) else "on") for rid in span
        ]
        actions = tuple(featurize_action(catalog, f) for f in flips)
        rng = np.random.default_rng(combine(_NS_DECIDE, combine(stable_hash(jid), seed)))
        chosen = int(rng.integers(len(actions)))
        propensity = 1.0 / len(actions)
        reward = _flip_reward(job, flips[chosen], default_plans[jid].est_cost, catalog)
        decisions.append(
            DecisionRecord(
                date=job.date,
                job_id=jid,
                template_id=job.template_id,
                context=context,
                actions=actions,
                chosen=chosen,
                propensity=propensity,
                reward=reward,
            )
        )
        if mode == "log":
            pipeline_flip = flips[chosen]
        else:
            pipeline_flip = flips[policy.choose(context, actions)]
        if pipeline_flip is not None:
            candidates.append(
                FlightCandidate(
                    job=job,
                    flip=pipeline_flip,
                    cost_default=default_plans[jid].est_cost,
                    default_latency_s=feats.latency_s,
                )
            )

    # Recompilation and pruning.
    prune = recompile_and_prune(candidates, catalog, budget.est_cost_delta_threshold)

    # Flighting.
    select_rng = np.random.default_rng(combine(_NS_SELECT, seed))
    selected = select_flights(prune.survivors, budget, select_rng)
    queue = run_flight_queue(selected, budget, noise, seed, catalog)
    flight_records = [f.record for f in queue.flights]
    samples = samples_from_flights(flight_records)

    # Validation gate and hint generation. Hints are only emitted in exploit
    # mode; logging days exist to gather decisions and flight history.
    outcome_counts = {"success": 0, "failure": 0, "filtered": 0, "timeout": 0}
    for rec in flight_records:
        outcome_counts[rec.outcome] += 1
    accepted: list[HintEntry] = []
    validated = 0
    if validation_enabled:
        for rec in flight_records:
            if rec.outcome != "success":
                continue
            if vmodel is not None:
                validated += 1
                d_read = rec.treatment.data_read / rec.baseline.data_read - 1.0
                d_write = rec.treatment.data_written / rec.baseline.data_written - 1.0
                if not gate(vmodel.predict(d_read, d_write), threshold):
                    continue
            accepted.append(HintEntry(rec.template_id, rec.flip.rule_id, rec.flip.direction))
    else:
        # Pre-validation pipeline: every estimate-pruned recommendation ships
        # directly, best estimated improvement per template. This is the
        # configuration the flight-and-gate stage exists to replace.
        best: dict[str, Survivor] = {}
        for sv in prune.survivors:
            tid = sv.job.template_id
            ratio = sv.cost_new / sv.cost_default
            cur = best.get(tid)
            if cur is None or ratio < cur.cost_new / cur.cost_default:
                best[tid] = sv
        for tid in sorted(best):
            sv = best[tid]
            accepted.append(HintEntry(tid, sv.flip.rule_id, sv.flip.direction))
    if mode == "exploit":
        merged = {e.template_id: e for e in carried_hints}
        merged.update({e.template_id: e for e in accepted})
        hints = [merged[tid] for tid in sorted(merged)]
    else:
        hints = []

    # Report: replay every job of a hinted template under baseline and hinted
    # configs and compare.
    hints_map = {e.template_id: e for e in hints}
    pairs: list[tuple[RunMetrics, RunMetrics]] = []
    hinted_jobs = 0
    hint_compile_failures = 0
    regressions = 0
    for job in jobs:
        entry = hints_map.get(job.template_id)
        if entry is None:
            continue
        hinted_jobs += 1
        try:
            treat_plan = compile_with_hints(job, hints_map, catalog)
        except CompileError:
            hint_compile_failures += 1
            continue
        base_plan = default_plans.get(job.job_id)
        if base_plan is None:
            base_plan = optimizer.compile(job, catalog.default_config(), catalog)
        # Paired evaluation: both arms share one seed so the common noise draw
        # cancels and a regression means the plan, not the weather.
        eval_seed = combine(_NS_EVAL, combine(stable_hash(job.job_id), seed))
        base = execute_job(job, base_plan, eval_seed, noise)
        treat = execute_job(job, treat_plan, eval_seed, noise)
        pairs.append((base.metrics, treat.metrics))
        if treat.metrics.latency_s > base.metrics.latency_s * (1.0 + LATENCY_REGRESSION_THRESHOLD):
            regressions += 1
    aggregates, deltas = report_metrics(pairs) if pairs else ({}, {})

    counts = {
        "jobs": len(grouped),
        "nonempty_spans": len(spans),
        "decisions": len(decisions),
        "candidates": len(candidates),
        "recompiled": prune.lower + prune.equal + prune.higher + prune.failed,
        "prune_lower": prune.lower,
        "prune_equal": prune.equal,
        "prune_higher": prune.higher,
        "prune_failed": prune.failed,
        "survivors": len(prune.survivors),
        "selected": len(selected),
        "flown": len(flight_records),
        "flight_dropped": len(queue.dropped),
        "flight_success": outcome_counts["success"],
        "flight_failure": outcome_counts["failure"],
        "flight_filtered": outcome_counts["filtered"],
        "flight_timeout": outcome_counts["timeout"],
        "validated": validated,
        "accepted": len(accepted),
        "hinted_templates": len(hints),
        "hinted_jobs": hinted_jobs,
        "hint_compile_failures": hint_compile_failures,
        "latency_regressions": regressions,
    }
    report = DayReport(date=date, mode=mode, counts=counts, aggregates=aggregates, deltas=deltas)
    return DayResult(
        report=report,
        hints=hints,
        decisions=decisions,
        prune=prune,
        queue=queue,
        samples=samples,
        features=features,
        spans=spans,
    )


def _flip_reward(job: Job, flip: Flip | None, cost_default: float, catalog: RuleCatalog) -> float:
    from .bandit import reward_from_costs

    if flip is None:
        return reward_from_costs(cost_default, cost_default)
    config = apply_flip(catalog, catalog.default_config(), flip)
    try:
        plan = optimizer.compile(job, config, catalog)
    except CompileError:
        return reward_from_costs(cost_default, None)
    return reward_from_costs(cost_default, plan.est_cost)


def write_report(report: DayReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER + "\n")
        fh.write(f"date\t{report.date}\n")
        fh.write(f"mode\t{report.mode}\n")
        for key in sorted(report.counts):
            fh.write(f"count_{key}\t{report.counts[key]}\n")
        for key in sorted(report.aggregates):
            fh.write(f"aggregate_pct_{key}\t{report.aggregates[key] * 100.0!r}\n")
        for key in sorted(report.deltas):
            values = ",".join(repr(v) for v in report.deltas[key])
            fh.write(f"deltas_{key}\t{values}\n")


@dataclass(frozen=True)
class RunDayPaths:
    hints: Path
    report: Path
    decision_log: Path
    flight_samples: Path


def day_paths(out_dir, stem: str) -> RunDayPaths:
    out_dir = Path(out_dir)
    return RunDayPaths(
        hints=out_dir / f"hints_{stem}.tsv",
        report=out_dir / f"report_{stem}.tsv",
        decision_log=out_dir / f"decisions_{stem}.tsv",
        flight_samples=out_dir / f"flights_{stem}.tsv",
    )


def run_day(
    view_path,
    policy: Policy | None,
    vmodel: ValidationModel | None,
    budget: FlightBudget,
    threshold: float,
    seed: int,
    mode: str,
    paths: RunDayPaths,
    jobs_path=None,
    noise: NoiseModel | None = None,
    catalog: RuleCatalog | None = None,
    validation_enabled: bool = True,
) -> DayResult:
    """File-level run_day: read the view and its job sidecar, write artifacts."""
    view_path = Path(view_path)
    records = read_view(view_path)
    jobs = read_jobs(Path(jobs_path) if jobs_path else jobs_path_for(view_path))
    result = run_day_core(
        jobs, records, policy, vmodel, budget, threshold, seed, mode,
        noise=noise, catalog=catalog, validation_enabled=validation_enabled,
    )
    from .validation import write_flight_samples

    for target in (paths.hints, paths.report, paths.decision_log, paths.flight_samples):
        Path(target).parent.mkdir(parents=True, exist_ok=True)
    write_hints(result.hints, paths.hints)
    write_report(result.report, paths.report)
    write_decision_log(result.decisions, paths.decision_log)
    write_flight_samples(result.samples, paths.flight_samples)
    return result


@dataclass
class CampaignConfig:
    budget: FlightBudget = field(default_factory=FlightBudget)
    threshold: float = -0.1
    seed: int = 0
    learn: LearnConfig = field(default_factory=LearnConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    validation_enabled: bool = True


@dataclass
class CampaignResult:
    policy: Policy
    vmodel: ValidationModel | None
    decisions: list[DecisionRecord]
    samples: list[FlightSample]
    log_days: list[DayResult]
    final: DayResult
    final_jobs: list[Job]
    final_records: list[ViewRecord]


def _hint_store(
    log_days: Sequence[DayResult],
    vmodel: ValidationModel | None,
    config: CampaignConfig,
) -> list[HintEntry]:
    """Hints still in force when the exploit day starts.

    Templates recur, so a flip vetted on any earlier day keeps its value; the
    store holds the best vetted entry per template. With validation on, that
    is the accepted flight with the lowest predicted delta; with validation
    off it is the best estimated improvement ever recommended, which is the
    whole store an estimate-only pipeline has.
    """
    if config.validation_enabled:
        if vmodel is None:
            return []
        best_rec: dict[str, tuple[float, FlightRecord]] = {}
        for day in log_days:
            for fl in day.queue.flights:
                rec = fl.record
                if rec.outcome != "success":
                    continue
                d_read = rec.treatment.data_read / rec.baseline.data_read - 1.0
                d_write = rec.treatment.data_written / rec.baseline.data_written - 1.0
                pred = vmodel.predict(d_read, d_write)
                if not gate(pred, config.threshold):
                    continue
                cur = best_rec.get(rec.template_id)
                if cur is None or pred < cur[0]:
                    best_rec[rec.template_id] = (pred, rec)
        return [
            HintEntry(tid, rec.flip.rule_id, rec.flip.direction)
            for tid, (_, rec) in sorted(best_rec.items())
        ]
    best_sv: dict[str, tuple[float, Survivor]] = {}
    for day in log_days:
        for sv in day.prune.survivors:
            ratio = sv.cost_new / sv.cost_default
            cur = best_sv.get(sv.job.template_id)
            if cur is None or ratio < cur[0]:
                best_sv[sv.job.template_id] = (ratio, sv)
    return [
        HintEntry(tid, sv.flip.rule_id, sv.flip.direction)
        for tid, (_, sv) in sorted(best_sv.items())
    ]


def run_campaign(
    days_jobs: Sequence[Sequence[Job]],
    config: CampaignConfig | None = None,
    catalog: RuleCatalog | None = None,
) -> CampaignResult:
    """Log on all days but the last, train, then exploit the final day."""
    from .workload import build_view_records

    config = config or CampaignConfig()
    catalog = catalog or default_catalog()
    if len(days_jobs) < 2:
        raise ValueError("campaign needs at least one logging day and one exploit day")
    decisions: list[DecisionRecord] = []
    samples: list[FlightSample] = []
    log_days: list[DayResult] = []
    for day_index, jobs in enumerate(days_jobs[:-1]):
        records = build_view_records(list(jobs), config.seed, catalog, config.noise)
        day = run_day_core(
            jobs, records, None, None, config.budget, config.threshold,
            combine(config.seed, day_index), "log",
            noise=config.noise, catalog=catalog,
            validation_enabled=config.validation_enabled,
        )
        decisions.extend(day.decisions)
        samples.extend(day.samples)
        log_days.append(day)
    policy = learn(decisions, config.learn)
    vmodel = None
    if config.validation_enabled and len({s.date for s in samples}) >= 2:
        from .validation import train_validation_model

        vmodel = train_validation_model(samples)
    carried = _hint_store(log_days, vmodel, config)
    final_jobs = list(days_jobs[-1])
    final_records = build_view_records(final_jobs, config.seed, catalog, config.noise)
    final = run_day_core(
        final_jobs, final_records, policy, vmodel, config.budget, config.threshold,
        combine(config.seed, len(days_jobs) - 1), "exploit",
        noise=config.noise, catalog=catalog,
        validation_enabled=config.validation_enabled,
        carried_hints=carried,
    )
    return CampaignResult(
        policy=policy,
        vmodel=vmodel,
        decisions=decisions,
        samples=samples,
        log_days=log_days,
        final=final,
        final_jobs=final_jobs,
        final_records=final_records,
    )


def end_to_end_oracle_gap(
    days_jobs: Sequence[Sequence[Job]],
    config: CampaignConfig | None = None,
    catalog: RuleCatalog | None = None,
) -> float:
    """Realized true PN-hour savings over the best-single-flip oracle savings.

    The campaign trains on all days but the last; savings are measured on the
    final day with the noise-free executor. A workload with nothing to save
    scores 1.0.
    """
    from .span import legal_flips

    config = config or CampaignConfig()
    catalog = catalog or default_catalog()
    if catalog.size > 64:
        raise ValueError(f"oracle limited to B <= 64 rules, got {catalog.size}")
    result = run_campaign(days_jobs, config, catalog)
    hints_map = {e.template_id: e for e in result.final.hints}

    by_template: dict[str, list[Job]] = {}
    for job in result.final_jobs:
        by_template.setdefault(job.template_id, []).append(job)

    available_total = 0.0
    realized_total = 0.0
    default_config = catalog.default_config()
    for template_id, jobs in by_template.items():
        base_pn = {}
        for job in jobs:
            base_pn[job.job_id] = true_pn_hours(job, optimizer.compile(job, default_config, catalog))
        best_saving = 0.0
        for flip in legal_flips(catalog):
            flip_config = apply_flip(catalog, default_config, flip)
            saving = 0.0
            try:
                for job in jobs:
                    pn = true_pn_hours(job, optimizer.compile(job, flip_config, catalog))
                    saving += base_pn[job.job_id] - pn
            except CompileError:
                continue
            best_saving = max(best_saving, saving)
        available_total += best_saving
        entry = hints_map.get(template_id)
        if entry is not None:
            hint_config = apply_flip(catalog, default_config, entry.flip())
            try:
                for job in jobs:
                    pn = true_pn_hours(job, optimizer.compile(job, hint_config, catalog))
                    realized_total += base_pn[job.job_id] - pn
            except CompileError:
                pass
    if available_total <= 0.0:
        return 1.0
    return realized_total / available_total
