"""Ground-truth runtime simulator for optimized plans.

True cardinalities are the optimizer's estimates times a per-operator
multiplicative error that is fixed per (template, operator site), so the same
template keeps the same systematic estimation bias across days and plan
variants. Work formulas are shared with the cost model; only the split into
cpu and io differs. Data read/written are deterministic functions of the plan
and the true cardinalities; pn_hours and latency carry seeded run noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hashing import combine, stable_hash
from .optimizer import _BCAST_ROWS_PER_PART, OptimizedPlan, PhysOp, physical_work
from .relalg import Job

EST_ERROR_SIGMA = 0.6  # spread of the per-site estimation error
_ERR_CLIP = (0.05, 20.0)
_ROWS_PER_VERTEX = 5.0e5
_MAX_VERTICES_PER_OP = 40
_WORK_RATE = 2000.0  # work units per second per vertex
_OP_OVERHEAD_S = 1.5  # scheduling overhead per operator on the critical path
_ERR_NS = stable_hash("card-error")
_RUN_NS = stable_hash("run-noise")

# Operators whose output cardinality carries its own estimation error.
_ERR_KINDS = {
    "scan", "filter", "hash_join", "merge_join", "nl_join", "broadcast_join",
    "hash_semi", "nl_semi", "broadcast_semi", "hash_agg", "sort_agg",
    "partial_agg", "eager_agg",
}


@dataclass(frozen=True)
class NoiseModel:
    latency_sigma: float = 0.35
    cpu_sigma: float = 0.15
    io_halfwidth: float = 0.02

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RunMetrics:
    latency_s: float
    pn_hours: float
    data_read: float
    data_written: float
    total_vertices: int


@dataclass(frozen=True)
class ExecResult:
    metrics: RunMetrics
    per_query_bytes_read: tuple[float, ...]
    max_memory_mb: float
    avg_memory_mb: float


@lru_cache(maxsize=1 << 16)
def card_error(template_id: str, site: str, sigma: float = EST_ERROR_SIGMA) -> float:
    """Deterministic estimation-error multiplier for one operator site."""
    if sigma <= 0:
        return 1.0
    seed = combine(_ERR_NS, combine(stable_hash(template_id), stable_hash(site)))
    rng = np.random.default_rng(seed)
    err = math.exp(rng.normal(0.0, sigma))
    return min(max(err, _ERR_CLIP[0]), _ERR_CLIP[1])


class _OpRun:
    __slots__ = ("op", "true_in", "true_out", "cpu", "io", "vertices", "memory", "time_s")


def _walk_true(op: PhysOp, template_id: str, sigma: float, out: list[_OpRun]) -> _OpRun:
    children = [_walk_true(c, template_id, sigma, out) for c in op.children]
    r = _OpRun()
    r.op = op
    r.true_in = tuple(c.true_out for c in children)
    if op.kind in _ERR_KINDS:
        r.true_out = op.card * card_error(template_id, op.attr("site", op.kind), sigma)
    elif op.kind == "union":
        r.true_out = sum(r.true_in)
    elif op.kind == "limit":
        r.true_out = min(float(op.attr("n")), r.true_in[0])
    else:  # exchange, range_exchange, sort, project, output: pass through
        r.true_out = r.true_in[0] if r.true_in else op.card
    attrs = dict(op.attrs)
    widths = tuple(c.op.width for c in children)
    r.cpu, r.io = physical_work(op.kind, attrs, r.true_in, widths, r.true_out, op.width)
    driving = max([r.true_out] + list(r.true_in))
    r.vertices = int(min(_MAX_VERTICES_PER_OP, max(1, math.ceil(driving / _ROWS_PER_VERTEX))))
    r.memory = _op_memory_bytes(op, r)
    r.time_s = (r.cpu + r.io) / (r.vertices * _WORK_RATE) + _OP_OVERHEAD_S
    out.append(r)
    return r


def _op_memory_bytes(op: PhysOp, r: _OpRun) -> float:
    k = op.kind
    if k in ("hash_join", "broadcast_join"):
        return r.true_in[0] * op.children[0].width
    if k in ("hash_semi", "broadcast_semi", "nl_semi"):
        return r.true_in[1] * 16.0
    if k == "nl_join":
        return r.true_in[0] * op.children[0].width
    if k in ("hash_agg", "partial_agg", "eager_agg"):
        return 0.5 * r.true_in[0] * op.children[0].width
    if k == "sort":
        return 0.3 * r.true_in[0] * op.children[0].width
    if k in ("exchange", "range_exchange"):
        return 0.05 * r.true_in[0] * op.children[0].width
    return 0.01 * (r.true_in[0] if r.true_in else r.true_out) * op.width


def _data_moved(r: _OpRun) -> tuple[float, float]:
    """(bytes_read, bytes_written) attributable to one operator."""
    op = r.op
    k = op.kind
    if k == "scan":
        return r.true_out * op.width, 0.0
    if k in ("exchange", "range_exchange"):
        v = r.true_in[0] * op.children[0].width
        return v, v
    if k == "broadcast_join":
        parts = min(64.0, max(1.0, math.ceil(r.true_in[1] / _BCAST_ROWS_PER_PART)))
        v = r.true_in[0] * op.children[0].width * parts
        return v, v
    if k == "broadcast_semi":
        parts = min(64.0, max(1.0, math.ceil(r.true_in[0] / _BCAST_ROWS_PER_PART)))
        v = r.true_in[1] * 16.0 * parts
        return v, v
    if k == "output":
        return 0.0, r.true_in[0] * op.children[0].width
    return 0.0, 0.0


def _crit_path(op: PhysOp, times: dict[int, float]) -> float:
    own = times[id(op)]
    if not op.children:
        return own
    return own + max(_crit_path(c, times) for c in op.children)


def execute_job(
    job: Job,
    plan: OptimizedPlan,
    run_seed: int,
    noise: NoiseModel | None = None,
    est_sigma: float = EST_ERROR_SIGMA,
) -> ExecResult:
    """Simulate one execution of the plan. Deterministic in all arguments."""
    noise = noise if noise is not None else NoiseModel()
    all_runs: list[_OpRun] = []
    per_query_read = []
    root_paths = []
    for root in plan.roots:
        runs: list[_OpRun] = []
        _walk_true(root, job.template_id, est_sigma, runs)
        times = {id(r.op): r.time_s for r in runs}
        root_paths.append(_crit_path(root, times))
        per_query_read.append(sum(_data_moved(r)[0] for r in runs if r.op.kind == "scan"))
        all_runs.extend(runs)

    cpu_total = sum(r.cpu for r in all_runs)
    io_total = sum(r.io for r in all_runs)
    read_total = sum(_data_moved(r)[0] for r in all_runs)
    written_total = sum(_data_moved(r)[1] for r in all_runs)
    vertices = sum(r.vertices for r in all_runs)
    memories = [r.memory for r in all_runs]

    rng = np.random.default_rng(
        combine(_RUN_NS, combine(stable_hash(job.job_id), run_seed & ((1 << 63) - 1)))
    )
    lat_factor = math.exp(rng.normal(0.0, noise.latency_sigma)) if noise.latency_sigma > 0 else 1.0
    cpu_factor = math.exp(rng.normal(0.0, noise.cpu_sigma)) if noise.cpu_sigma > 0 else 1.0
    io_factor = 1.0 + (rng.uniform(-noise.io_halfwidth, noise.io_halfwidth) if noise.io_halfwidth > 0 else 0.0)

    pn_hours = (cpu_total * cpu_factor + io_total * io_factor) / _WORK_RATE / 3600.0
    latency = max(root_paths) * lat_factor
    return ExecResult(
        metrics=RunMetrics(
            latency_s=latency,
            pn_hours=pn_hours,
            data_read=read_total,
            data_written=written_total,
            total_vertices=vertices,
        ),
        per_query_bytes_read=tuple(per_query_read),
        max_memory_mb=max(memories) / 1.0e6,
        avg_memory_mb=sum(memories) / len(memories) / 1.0e6,
    )


def true_pn_hours(job: Job, plan: OptimizedPlan, est_sigma: float = EST_ERROR_SIGMA) -> float:
    """Noise-free expected pn_hours; the oracle measure for plan quality."""
    total_cpu = 0.0
    total_io = 0.0
    for root in plan.roots:
        runs: list[_OpRun] = []
        _walk_true(root, job.template_id, est_sigma, runs)
        total_cpu += sum(r.cpu for r in runs)
        total_io += sum(r.io for r in runs)
    return (total_cpu + total_io) / _WORK_RATE / 3600.0
