"""Flighting: re-validate hint candidates on a budgeted side cluster.

Candidates are pruned by estimated cost, deduplicated to one representative
job per template, ordered cheapest-first, truncated against the time budget,
then run as baseline/treatment pairs through a fixed-size slot queue. Flight
outcomes feed the validation model and, when accepted, the hint table.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .catalog import Flip, RuleCatalog, apply_flip, default_catalog
from .executor import NoiseModel, RunMetrics, execute_job
from .hashing import combine, stable_hash
from . import optimizer
from .optimizer import CompileError
from .relalg import Job

_NS_OUTCOME = stable_hash("flight-outcome")
_NS_PAIR = stable_hash("flight-pair")

# Wall-clock charged against the budget when a flight dies before producing
# a measurement.
FAILURE_DURATION_S = 60.0


@dataclass(frozen=True)
class FlightBudget:
    queue_size: int = 8
    total_budget_s: float = 14400.0
    per_job_timeout_s: float = 86400.0
    est_cost_delta_threshold: float = 0.0
    failure_rate: float = 0.02
    filtered_rate: float = 0.03


@dataclass(frozen=True)
class FlightCandidate:
    job: Job
    flip: Flip
    cost_default: float
    default_latency_s: float


@dataclass(frozen=True)
class Survivor:
    job: Job
    flip: Flip
    cost_default: float
    cost_new: float
    default_latency_s: float


@dataclass
class PruneResult:
    survivors: list[Survivor] = field(default_factory=list)
    lower: int = 0
    equal: int = 0
    higher: int = 0
    failed: int = 0


def recompile_and_prune(
    candidates: list[FlightCandidate],
    catalog: RuleCatalog | None = None,
    improvement_threshold: float = 0.0,
) -> PruneResult:
    """Recompile each candidate flip and keep strict estimated improvements.

    A candidate survives when (default - new) / default exceeds the
    threshold strictly; failed compilations are counted and dropped.
    """
    catalog = catalog or default_catalog()
    result = PruneResult()
    for cand in candidates:
        config = apply_flip(catalog, catalog.default_config(), cand.flip)
        try:
            plan = optimizer.compile(cand.job, config, catalog)
        except CompileError:
            result.failed += 1
            continue
        new_cost = plan.est_cost
        if new_cost < cand.cost_default:
            result.lower += 1
        elif new_cost == cand.cost_default:
            result.equal += 1
        else:
            result.higher += 1
        improvement = (cand.cost_default - new_cost) / cand.cost_default
        if improvement > improvement_threshold:
            result.survivors.append(
                Survivor(cand.job, cand.flip, cand.cost_default, new_cost, cand.default_latency_s)
            )
    return result


def select_flights(
    survivors: list[Survivor],
    budget: FlightBudget,
    rng: np.random.Generator,
) -> list[Survivor]:
    """One representative per template, cheapest recompiled cost first,
    truncated so projected durations fit the budget.

    The projection charges each flight twice its job's default latency
    (baseline arm plus treatment arm).
    """
    by_template: dict[str, list[Survivor]] = {}
    for s in survivors:
        by_template.setdefault(s.job.template_id, []).append(s)
    picked = [group[int(rng.integers(len(group)))] for group in by_template.values()]
    picked.sort(key=lambda s: (s.cost_new, s.job.template_id, s.job.job_id))
    selected = []
    projected = 0.0
    for s in picked:
        cost = 2.0 * s.default_latency_s
        if projected + cost > budget.total_budget_s:
            continue
        projected += cost
        selected.append(s)
    return selected


@dataclass(frozen=True)
class FlightRecord:
    job_id: str
    template_id: str
    date: str
    flip: Flip
    outcome: str  # success | failure | filtered | timeout
    duration_s: float
    baseline: RunMetrics | None
    treatment: RunMetrics | None
    cost_default: float
    cost_new: float


def _outcome_roll(job_id: str, flip: Flip, seed: int, budget: FlightBudget) -> str:
    key = combine(
        _NS_OUTCOME,
        combine(stable_hash(job_id), combine(stable_hash(f"{flip.rule_id}:{flip.direction}"), seed)),
    )
    u = np.random.default_rng(key).random()
    if u < budget.failure_rate:
        return "failure"
    if u < budget.failure_rate + budget.filtered_rate:
        return "filtered"
    return "run"


def flight(
    job: Job,
    flip: Flip,
    seed: int,
    budget: FlightBudget | None = None,
    noise: NoiseModel | None = None,
    catalog: RuleCatalog | None = None,
) -> FlightRecord:
    """Run one baseline/treatment pair, with injected infrastructure noise."""
    budget = budget or FlightBudget()
    noise = noise or NoiseModel()
    catalog = catalog or default_catalog()
    roll = _outcome_roll(job.job_id, flip, seed, budget)
    if roll == "filtered":
        return FlightRecord(
            job.job_id, job.template_id, job.date, flip,
            "filtered", 0.0, None, None, 0.0, 0.0,
        )
    base_plan = optimizer.compile(job, catalog.default_config(), catalog)
    cost_default = base_plan.est_cost
    config = apply_flip(catalog, catalog.default_config(), flip)
    try:
        treat_plan = optimizer.compile(job, config, catalog)
        cost_new = treat_plan.est_cost
    except CompileError:
        treat_plan = None
        cost_new = 0.0
    if roll == "failure" or treat_plan is None:
        return FlightRecord(
            job.job_id, job.template_id, job.date, flip,
            "failure", FAILURE_DURATION_S, None, None, cost_default, cost_new,
        )
    # Both arms run under the same seed: a flight is a paired experiment, so
    # the shared infrastructure draw cancels and the deltas isolate the flip.
    base = execute_job(job, base_plan, combine(_NS_PAIR, seed), noise)
    treat = execute_job(job, treat_plan, combine(_NS_PAIR, seed), noise)
    timeout = budget.per_job_timeout_s
    duration = min(base.metrics.latency_s, timeout) + min(treat.metrics.latency_s, timeout)
    outcome = "success"
    if base.metrics.latency_s > timeout or treat.metrics.latency_s > timeout:
        outcome = "timeout"
    return FlightRecord(
        job.job_id, job.template_id, job.date, flip,
        outcome, duration, base.metrics, treat.metrics, cost_default, cost_new,
    )


@dataclass(frozen=True)
class ScheduledFlight:
    record: FlightRecord
    start_s: float
    end_s: float


@dataclass
class QueueResult:
    flights: list[ScheduledFlight]
    dropped: list[Survivor]
    busy_s: float
    makespan_s: float


def run_flight_queue(
    selected: list[Survivor],
    budget: FlightBudget,
    noise: NoiseModel,
    seed: int,
    catalog: RuleCatalog | None = None,
) -> QueueResult:
    """Dispatch flights through queue_size slots, never exceeding the budget.

    All flights are ready at time zero; each takes the earliest free slot.
    A flight whose actual duration would push cumulative busy time past the
    budget is dropped, so the budget holds even when durations overrun their
    projections.
    """
    catalog = catalog or default_catalog()
    slots: list[float] = []
    flights: list[ScheduledFlight] = []
    dropped: list[Survivor] = []
    busy = 0.0
    for survivor in selected:
        record = flight(survivor.job, survivor.flip, seed, budget, noise, catalog)
        if busy + record.duration_s > budget.total_budget_s:
            dropped.append(survivor)
            continue
        busy += record.duration_s
        if len(slots) < budget.queue_size:
            start = 0.0
        else:
            start = heapq.heappop(slots)
        end = start + record.duration_s
        heapq.heappush(slots, end)
        flights.append(ScheduledFlight(record, start, end))
    makespan = max((f.end_s for f in flights), default=0.0)
    return QueueResult(flights, dropped, busy, makespan)


def aa_run(
    job: Job,
    config=None,
    n: int = 10,
    seed: int = 0,
    noise: NoiseModel | None = None,
    catalog: RuleCatalog | None = None,
) -> dict[str, float]:
    """Coefficient of variation per metric over n same-config reruns."""
    if n < 2:
        raise ValueError("A/A needs at least two runs")
    catalog = catalog or default_catalog()
    noise = noise or NoiseModel()
    plan = optimizer.compile(job, config or catalog.default_config(), catalog)
    metrics: dict[str, list[float]] = {
        "latency_s": [],
        "pn_hours": [],
        "data_read": [],
        "data_written": [],
    }
    for i in range(n):
        run = execute_job(job, plan, combine(stable_hash("aa-run"), combine(seed, i)), noise)
        metrics["latency_s"].append(run.metrics.latency_s)
        metrics["pn_hours"].append(run.metrics.pn_hours)
        metrics["data_read"].append(run.metrics.data_read)
        metrics["data_written"].append(run.metrics.data_written)
    out = {}
    for name, values in metrics.items():
        arr = np.asarray(values)
        # Identical measurements have zero variance by definition; computing
        # through the mean would leave float dust.
        if arr.max() == arr.min() or arr.mean() <= 0:
            out[name] = 0.0
        else:
            out[name] = float(arr.std(ddof=1) / arr.mean())
    return out
