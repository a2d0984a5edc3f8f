"""Logical relational algebra for the miniature optimizer.

Operator trees are immutable; rewrites build new trees. Cardinality and row
width estimation live here because both the rewriter and the cost model need
them. Estimates follow the usual independence assumptions over the per-job
input statistics.
"""

from __future__ import annotations

import json
import typing
from dataclasses import dataclass, field
from typing import Mapping


@dataclass(frozen=True)
class Pred:
    """A single-table filter predicate with a known selectivity key."""

    pred_id: str
    table: str


@dataclass(frozen=True)
class Scan:
    table: str


@dataclass(frozen=True)
class Filter:
    child: "Node"
    preds: tuple[Pred, ...]
    const_terms: int = 0  # foldable constant subexpressions in the predicates


@dataclass(frozen=True)
class Project:
    child: "Node"
    keep: float  # fraction of the input row width kept


@dataclass(frozen=True)
class Join:
    left: "Node"
    right: "Node"
    kind: str  # "equi" | "theta" | "cross"
    pairs: tuple[str, ...] = ()  # join-selectivity keys, () for cross joins
    semi_eligible: bool = False


@dataclass(frozen=True)
class SemiJoin:
    left: "Node"
    right: "Node"
    pair: str


@dataclass(frozen=True)
class Aggregate:
    child: "Node"
    key: str  # group-factor key in the input stats
    partial_eligible: bool = False
    eager_eligible: bool = False


@dataclass(frozen=True)
class PartialAggregate:
    child: "Node"
    key: str


@dataclass(frozen=True)
class EagerAggregate:
    child: "Node"
    key: str


@dataclass(frozen=True)
class Union:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Limit:
    child: "Node"
    n: float


Node = typing.Union[
    Scan, Filter, Project, Join, SemiJoin,
    Aggregate, PartialAggregate, EagerAggregate, Union, Limit,
]

_AGG_WIDTH_FACTOR = 0.6  # aggregated rows are narrower than their input


@dataclass(frozen=True)
class InputStats:
    """Per-job statistics the optimizer estimates from.

    rows/widths are per table; sels per predicate id; join_sels per join pair
    key; group_factors per aggregate key (output groups / input rows).
    """

    rows: Mapping[str, float]
    widths: Mapping[str, float]
    sels: Mapping[str, float] = field(default_factory=dict)
    join_sels: Mapping[str, float] = field(default_factory=dict)
    group_factors: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Query:
    root: Node
    template: str  # per-query template label


@dataclass(frozen=True)
class Job:
    job_id: str
    template_id: str
    normalized_name: str
    date: str  # ISO day
    queries: tuple[Query, ...]
    stats: InputStats

    def __post_init__(self) -> None:
        if not self.queries:
            raise ValueError("job must have at least one query")


def pair_key(a: str, b: str) -> str:
    """Canonical join-selectivity key for a table pair."""
    return f"{a}|{b}" if a <= b else f"{b}|{a}"


class Estimator:
    """Memoized cardinality and width estimation for one compile."""

    def __init__(self, stats: InputStats):
        self.stats = stats
        # Keyed structurally: nodes are frozen dataclasses, and id()-keyed
        # memoization is unsound once the allocator reuses addresses of
        # collected intermediate trees.
        self._memo: dict[Node, tuple[float, float]] = {}

    def card(self, node: Node) -> float:
        return self.estimate(node)[0]

    def width(self, node: Node) -> float:
        return self.estimate(node)[1]

    def estimate(self, node: Node) -> tuple[float, float]:
        got = self._memo.get(node)
        if got is not None:
            return got
        out = self._estimate(node)
        self._memo[node] = out
        return out

    def _estimate(self, node: Node) -> tuple[float, float]:
        s = self.stats
        if isinstance(node, Scan):
            return float(s.rows[node.table]), float(s.widths[node.table])
        if isinstance(node, Filter):
            c, w = self.estimate(node.child)
            # Duplicate predicate ids count once: estimation is not fooled
            # by redundant predicates, only evaluation cost is.
            sel = 1.0
            for pid in {p.pred_id for p in node.preds}:
                sel *= s.sels[pid]
            return c * sel, w
        if isinstance(node, Project):
            c, w = self.estimate(node.child)
            return c, w * node.keep
        if isinstance(node, Join):
            cl, wl = self.estimate(node.left)
            cr, wr = self.estimate(node.right)
            sel = 1.0
            for key in node.pairs:
                sel *= float(s.join_sels[key])
            return cl * cr * sel, wl + wr
        if isinstance(node, SemiJoin):
            cl, wl = self.estimate(node.left)
            cr, _ = self.estimate(node.right)
            match = min(1.0, cr * float(s.join_sels[node.pair]))
            return cl * match, wl
        if isinstance(node, (Aggregate, PartialAggregate, EagerAggregate)):
            c, w = self.estimate(node.child)
            g = float(s.group_factors[node.key])
            return max(1.0, c * g), w * _AGG_WIDTH_FACTOR
        if isinstance(node, Union):
            parts = [self.estimate(ch) for ch in node.children]
            total = sum(c for c, _ in parts)
            if total <= 0:
                return 0.0, parts[0][1]
            width = sum(c * w for c, w in parts) / total
            return total, width
        if isinstance(node, Limit):
            c, w = self.estimate(node.child)
            return min(c, float(node.n)), w
        raise TypeError(f"unknown node type {type(node).__name__}")


def base_tables(node: Node) -> frozenset[str]:
    if isinstance(node, Scan):
        return frozenset((node.table,))
    if isinstance(node, (Join, SemiJoin)):
        return base_tables(node.left) | base_tables(node.right)
    if isinstance(node, Union):
        out: frozenset[str] = frozenset()
        for ch in node.children:
            out |= base_tables(ch)
        return out
    child = getattr(node, "child", None)
    if child is None:
        raise TypeError(f"unknown node type {type(node).__name__}")
    return base_tables(child)


# ---------------------------------------------------------------------------
# JSON round trip for jobs (used by the workload sidecar files)
# ---------------------------------------------------------------------------

def node_to_dict(node: Node) -> dict:
    if isinstance(node, Scan):
        return {"op": "scan", "table": node.table}
    if isinstance(node, Filter):
        return {
            "op": "filter",
            "child": node_to_dict(node.child),
            "preds": [[p.pred_id, p.table] for p in node.preds],
            "const_terms": node.const_terms,
        }
    if isinstance(node, Project):
        return {"op": "project", "child": node_to_dict(node.child), "keep": node.keep}
    if isinstance(node, Join):
        return {
            "op": "join",
            "left": node_to_dict(node.left),
            "right": node_to_dict(node.right),
            "kind": node.kind,
            "pairs": list(node.pairs),
            "semi_eligible": node.semi_eligible,
        }
    if isinstance(node, SemiJoin):
        return {
            "op": "semijoin",
            "left": node_to_dict(node.left),
            "right": node_to_dict(node.right),
            "pair": node.pair,
        }
    if isinstance(node, Aggregate):
        return {
            "op": "aggregate",
            "child": node_to_dict(node.child),
            "key": node.key,
            "partial_eligible": node.partial_eligible,
            "eager_eligible": node.eager_eligible,
        }
    if isinstance(node, PartialAggregate):
        return {"op": "partial_agg", "child": node_to_dict(node.child), "key": node.key}
    if isinstance(node, EagerAggregate):
        return {"op": "eager_agg", "child": node_to_dict(node.child), "key": node.key}
    if isinstance(node, Union):
        return {"op": "union", "children": [node_to_dict(c) for c in node.children]}
    if isinstance(node, Limit):
        return {"op": "limit", "child": node_to_dict(node.child), "n": node.n}
    raise TypeError(f"unknown node type {type(node).__name__}")


def node_from_dict(d: dict) -> Node:
    op = d["op"]
    if op == "scan":
        return Scan(d["table"])
    if op == "filter":
        return Filter(
            node_from_dict(d["child"]),
            tuple(Pred(pid, tbl) for pid, tbl in d["preds"]),
            int(d.get("const_terms", 0)),
        )
    if op == "project":
        return Project(node_from_dict(d["child"]), float(d["keep"]))
    if op == "join":
        return Join(
            node_from_dict(d["left"]),
            node_from_dict(d["right"]),
            d["kind"],
            tuple(d.get("pairs", ())),
            bool(d.get("semi_eligible", False)),
        )
    if op == "semijoin":
        return SemiJoin(node_from_dict(d["left"]), node_from_dict(d["right"]), d["pair"])
    if op == "aggregate":
        return Aggregate(
            node_from_dict(d["child"]),
            d["key"],
            bool(d.get("partial_eligible", False)),
            bool(d.get("eager_eligible", False)),
        )
    if op == "partial_agg":
        return PartialAggregate(node_from_dict(d["child"]), d["key"])
    if op == "eager_agg":
        return EagerAggregate(node_from_dict(d["child"]), d["key"])
    if op == "union":
        return Union(tuple(node_from_dict(c) for c in d["children"]))
    if op == "limit":
        return Limit(node_from_dict(d["child"]), float(d["n"]))
    raise ValueError(f"unknown op {op!r}")


def job_to_json(job: Job) -> str:
    doc = {
        "job_id": job.job_id,
        "template_id": job.template_id,
        "normalized_name": job.normalized_name,
        "date": job.date,
        "queries": [
            {"template": q.template, "root": node_to_dict(q.root)} for q in job.queries
        ],
        "stats": {
            "rows": dict(job.stats.rows),
            "widths": dict(job.stats.widths),
            "sels": dict(job.stats.sels),
            "join_sels": dict(job.stats.join_sels),
            "group_factors": dict(job.stats.group_factors),
        },
    }
    return json.dumps(doc, sort_keys=True)


def job_from_json(text: str) -> Job:
    doc = json.loads(text)
    st = doc["stats"]
    return Job(
        job_id=doc["job_id"],
        template_id=doc["template_id"],
        normalized_name=doc["normalized_name"],
        date=doc["date"],
        queries=tuple(
            Query(node_from_dict(q["root"]), q["template"]) for q in doc["queries"]
        ),
        stats=InputStats(
            rows=st["rows"],
            widths=st["widths"],
            sels=st["sels"],
            join_sels=st["join_sels"],
            group_factors=st["group_factors"],
        ),
    )
