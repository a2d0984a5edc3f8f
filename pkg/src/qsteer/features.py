"""Per-job features for the hint policy.

A job's view rows (one per query tree) are folded into a single super-root
row with a fixed per-column aggregation, then joined with the job's span to
produce the context. Feature vectors live in a 2^18 hashed space; keys are
derived with the shared 64-bit mixer so they are stable across processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .catalog import Flip, RuleCatalog, RuleCategory
from .hashing import combine, combine_np, stable_hash
from .workload import ViewRecord

D_BITS_DEFAULT = 18

# Aggregation per view column when folding query rows into the super-root.
SUPER_ROOT_AGG = {
    "normalized_job_name": "min",
    "rule_signature": "min",
    "latency_s": "min",
    "estimated_cost": "min",
    "query_template": "min",
    "total_vertices": "min",
    "max_memory_mb": "min",
    "avg_memory_mb": "min",
    "pn_hours": "min",
    "estimated_cardinality": "sum",
    "bytes_read": "sum",
    "row_count": "sum",
    "avg_row_length": "avg",
}

DENSE_FIELDS = (
    "estimated_cost",
    "estimated_cardinality",
    "avg_row_length",
    "row_count",
    "bytes_read",
    "latency_s",
    "pn_hours",
    "total_vertices",
    "max_memory_mb",
    "avg_memory_mb",
)


@dataclass(frozen=True)
class JobFeatures:
    job_id: str
    template_id: str
    date: str
    normalized_job_name: str
    rule_signature: str
    query_template: str
    estimated_cost: float
    estimated_cardinality: float
    avg_row_length: float
    row_count: float
    bytes_read: float
    latency_s: float
    pn_hours: float
    total_vertices: float
    max_memory_mb: float
    avg_memory_mb: float

    def numeric_vector(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in DENSE_FIELDS)


def _reduce(kind: str, values: list):
    if kind == "min":
        return min(values)
    if kind == "sum":
        return sum(values)
    if kind == "avg":
        return sum(values) / len(values)
    raise ValueError(f"unknown aggregation {kind!r}")


def build_super_root(records: Sequence[ViewRecord]) -> JobFeatures:
    """Fold one job's view rows into a single feature row."""
    if not records:
        raise ValueError("cannot build super-root from zero records")
    job_ids = {r.job_id for r in records}
    if len(job_ids) != 1:
        raise ValueError(f"records span multiple jobs: {sorted(job_ids)}")
    r0 = records[0]

    def col(name):
        # query_template is the per-row template label; the view stores it
        # per job, so every row carries the same value.
        if name == "query_template":
            return [r.template_id for r in records]
        return [getattr(r, name) for r in records]

    agg = {name: _reduce(kind, col(name)) for name, kind in SUPER_ROOT_AGG.items()}
    return JobFeatures(
        job_id=r0.job_id,
        template_id=r0.template_id,
        date=r0.date,
        normalized_job_name=agg["normalized_job_name"],
        rule_signature=agg["rule_signature"],
        query_template=agg["query_template"],
        estimated_cost=float(agg["estimated_cost"]),
        estimated_cardinality=float(agg["estimated_cardinality"]),
        avg_row_length=float(agg["avg_row_length"]),
        row_count=float(agg["row_count"]),
        bytes_read=float(agg["bytes_read"]),
        latency_s=float(agg["latency_s"]),
        pn_hours=float(agg["pn_hours"]),
        total_vertices=float(agg["total_vertices"]),
        max_memory_mb=float(agg["max_memory_mb"]),
        avg_memory_mb=float(agg["avg_memory_mb"]),
    )


def span_indicators(span: Iterable[int]) -> list[tuple[int, ...]]:
    """Singleton, pair and triple id combinations of the span, sorted."""
    ids = sorted(set(span))
    out: list[tuple[int, ...]] = [(i,) for i in ids]
    out.extend(combinations(ids, 2))
    out.extend(combinations(ids, 3))
    return out


@dataclass(frozen=True)
class ContextVector:
    """Raw job context: untransformed numerics plus the span ids."""

    dense: tuple[float, ...]
    span: tuple[int, ...]


@dataclass(frozen=True)
class ActionVector:
    kind: str  # "noop" | "flip"
    rule_id: int
    category: str
    direction: str


NOOP_ACTION = ActionVector("noop", -1, "none", "none")


def featurize_context(features: JobFeatures, span: Iterable[int]) -> ContextVector:
    return ContextVector(features.numeric_vector(), tuple(sorted(set(span))))


def featurize_action(catalog: RuleCatalog, flip: Flip | None) -> ActionVector:
    if flip is None:
        return NOOP_ACTION
    rule = catalog.rule(flip.rule_id)
    if rule.category is RuleCategory.REQUIRED:
        raise ValueError(f"required rule {rule.name} cannot be an action")
    return ActionVector("flip", rule.rule_id, rule.category.value, flip.direction)


@dataclass(frozen=True)
class Normalizer:
    """log1p then standardize, with constants frozen at training time."""

    means: tuple[float, ...]
    stds: tuple[float, ...]

    def apply(self, dense: Sequence[float]) -> tuple[float, ...]:
        if len(dense) != len(self.means):
            raise ValueError("dense width does not match normalizer")
        return tuple(
            (math.log1p(v) - m) / s for v, m, s in zip(dense, self.means, self.stds)
        )

    @staticmethod
    def fit(rows: Sequence[Sequence[float]]) -> "Normalizer":
        if not rows:
            raise ValueError("cannot fit normalizer on zero rows")
        arr = np.log1p(np.asarray(rows, dtype=np.float64))
        means = arr.mean(axis=0)
        stds = np.maximum(arr.std(axis=0), 1e-9)
        return Normalizer(tuple(float(x) for x in means), tuple(float(x) for x in stds))


# Namespaces keep dense, span and action keys from colliding by construction
# of the mixer inputs (values still share the 2^18 bucket space).
_NS_DENSE = stable_hash("feat:dense")
_NS_SPAN = stable_hash("feat:span")
_NS_ACTION = stable_hash("feat:action")
_NS_PAIR = stable_hash("feat:ctx-x-act")


def _span_keys(span: tuple[int, ...]) -> np.ndarray:
    keys = []
    for combo in span_indicators(span):
        h = _NS_SPAN
        for rid in combo:
            h = combine(h, rid)
        keys.append(h)
    return np.asarray(keys, dtype=np.uint64)


def _action_keys(action: ActionVector) -> np.ndarray:
    if action.kind == "noop":
        return np.asarray([combine(_NS_ACTION, stable_hash("noop"))], dtype=np.uint64)
    return np.asarray(
        [
            combine(_NS_ACTION, combine(stable_hash("rule"), action.rule_id)),
            combine(_NS_ACTION, stable_hash("cat:" + action.category)),
            combine(_NS_ACTION, stable_hash("dir:" + action.direction)),
        ],
        dtype=np.uint64,
    )


def hashed_features(
    context: ContextVector,
    action: ActionVector,
    normalizer: Normalizer,
    d_bits: int = D_BITS_DEFAULT,
) -> tuple[np.ndarray, np.ndarray]:
    """(indices, values) of the joint context x action vector in 2^d_bits."""
    dense = normalizer.apply(context.dense)
    ctx_keys = [combine(_NS_DENSE, i) for i in range(len(dense))]
    ctx_vals = list(dense)
    for key in _span_keys(context.span):
        ctx_keys.append(int(key))
        ctx_vals.append(1.0)
    ctx_keys_arr = np.asarray(ctx_keys, dtype=np.uint64)
    act_keys = _action_keys(action)
    # Cross every context key with every action key.
    crossed = combine_np(
        np.uint64(_NS_PAIR),
        combine_np(ctx_keys_arr[:, None], act_keys[None, :]).ravel(),
    )
    mask = np.uint64((1 << d_bits) - 1)
    idx = (crossed & mask).astype(np.int64)
    vals = np.repeat(np.asarray(ctx_vals, dtype=np.float64), len(act_keys))
    # Also keep the action marginal so actions are distinguishable even when
    # context weights wash out.
    act_idx = (act_keys & mask).astype(np.int64)
    idx = np.concatenate([idx, act_idx])
    vals = np.concatenate([vals, np.ones(len(act_idx))])
    return idx, vals
