"""Miniature deterministic rule-based optimizer.

compile() lowers each query tree of a job to a physical plan under a rule
configuration: a normalization pass, a guarded top-down logical rewrite loop,
join ordering, a commute pass, cost-based implementation selection, and the
required enforcement passes (partitioning, properties, output). The rule
signature records every rule that fired while producing the final plan.

Costs are per-operator and (except nested-loop joins and sorts) linear in the
estimated input cardinality, scaled by normalized row width. The same
work formulas are reused by the runtime simulator with true cardinalities,
split into cpu and io components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .catalog import RuleCatalog, RuleConfig, RuleSignature, default_catalog
from .relalg import (
    Aggregate,
    EagerAggregate,
    Estimator,
    Filter,
    Job,
    Join,
    Limit,
    Node,
    PartialAggregate,
    Pred,
    Project,
    Scan,
    SemiJoin,
    Union,
    base_tables,
)


class CompileError(Exception):
    """The restricted rule set cannot produce a valid plan."""


SETUP_COST = 25.0
_WIDTH_NORM = 256.0
_BCAST_ROWS_PER_PART = 1.0e6
_SEMI_KEY_WIDTH = 16.0

# Join implementations applicable per logical join kind.
_JOIN_IMPLS = {
    "equi": ("hash_join", "merge_join", "nestedloop_join", "broadcast_join"),
    "cross": ("nestedloop_join", "broadcast_join"),
    "theta": ("nestedloop_join",),
}
_SEMI_IMPLS = ("hash_join", "nestedloop_join", "broadcast_join")
_AGG_IMPLS = ("hash_agg", "sort_agg")


def _wf(width: float) -> float:
    return width / _WIDTH_NORM


def physical_work(kind, attrs, in_cards, in_widths, out_card, out_width):
    """(cpu, io) work units for one physical operator.

    Shared between the cost model (estimated cardinalities) and the runtime
    simulator (true cardinalities); only the cardinalities differ.
    """
    if kind == "scan":
        v = out_card * _wf(out_width)
        return 0.06 * v, 0.35 * v
    if kind == "filter":
        v = in_cards[0] * _wf(in_widths[0])
        terms = attrs.get("terms", 1)
        return 0.05 * v * (0.5 + 0.5 * terms), 0.0
    if kind == "project":
        return 0.05 * in_cards[0] * _wf(in_widths[0]), 0.0
    if kind == "exchange":
        v = in_cards[0] * _wf(in_widths[0])
        return 0.04 * v, 0.22 * v
    if kind == "range_exchange":
        v = in_cards[0] * _wf(in_widths[0])
        return 0.04 * v, 0.18 * v
    if kind == "sort":
        c = in_cards[0]
        return 0.02 * math.log2(max(c, 4.0)) * c * _wf(in_widths[0]), 0.0
    if kind == "hash_join":
        b = in_cards[0] * _wf(in_widths[0])
        p = in_cards[1] * _wf(in_widths[1])
        return 0.8 * b + 0.3 * p, 0.02 * b
    if kind == "merge_join":
        return 0.22 * (in_cards[0] * _wf(in_widths[0]) + in_cards[1] * _wf(in_widths[1])), 0.0
    if kind == "nl_join":
        return 2.0e-5 * in_cards[0] * in_cards[1] * max(_wf(in_widths[0]), _wf(in_widths[1])), 0.0
    if kind == "broadcast_join":
        b = in_cards[0] * _wf(in_widths[0])
        p = in_cards[1] * _wf(in_widths[1])
        parts = min(64.0, max(1.0, math.ceil(in_cards[1] / _BCAST_ROWS_PER_PART)))
        return 0.8 * b + 0.3 * p, 0.25 * b * parts
    if kind == "hash_semi":
        keys = in_cards[1]
        return 0.35 * keys + 0.3 * in_cards[0] * _wf(in_widths[0]), 0.02 * keys * _wf(_SEMI_KEY_WIDTH)
    if kind == "nl_semi":
        return 2.0e-5 * in_cards[0] * in_cards[1], 0.0
    if kind == "broadcast_semi":
        keys = in_cards[1]
        parts = min(64.0, max(1.0, math.ceil(in_cards[0] / _BCAST_ROWS_PER_PART)))
        return 0.35 * keys + 0.3 * in_cards[0] * _wf(in_widths[0]), 0.02 * keys * parts * _wf(_SEMI_KEY_WIDTH)
    if kind == "hash_agg":
        v = in_cards[0] * _wf(in_widths[0])
        return 0.55 * v, 0.01 * v
    if kind == "sort_agg":
        return 0.18 * in_cards[0] * _wf(in_widths[0]), 0.0
    if kind == "partial_agg":
        return 0.5 * in_cards[0] * _wf(in_widths[0]), 0.0
    if kind == "eager_agg":
        return 0.6 * in_cards[0] * _wf(in_widths[0]), 0.0
    if kind == "union":
        return 0.02 * sum(c * _wf(w) for c, w in zip(in_cards, in_widths)), 0.0
    if kind == "limit":
        return 0.01 * out_card * _wf(out_width), 0.0
    if kind == "output":
        v = in_cards[0] * _wf(in_widths[0])
        return 0.03 * v, 0.30 * v
    raise ValueError(f"unknown physical operator kind {kind!r}")


@dataclass(frozen=True)
class PhysOp:
    """Physical operator with estimated output shape and own cost."""

    kind: str
    children: tuple["PhysOp", ...]
    card: float
    width: float
    srt: bool  # output has an enforced sort order
    attrs: tuple  # sorted (key, value) pairs; includes the logical site id
    est_cpu: float
    est_io: float
    fp: str  # structural fingerprint

    @property
    def est_cost(self) -> float:
        return self.est_cpu + self.est_io + SETUP_COST

    def attr(self, key, default=None):
        for k, v in self.attrs:
            if k == key:
                return v
        return default


def _mk(kind, children, card, width, srt, **attrs) -> PhysOp:
    at = tuple(sorted(attrs.items()))
    cpu, io = physical_work(
        kind,
        attrs,
        tuple(c.card for c in children),
        tuple(c.width for c in children),
        card,
        width,
    )
    fp = f"{kind}{at!r}(" + ",".join(c.fp for c in children) + ")"
    return PhysOp(kind, tuple(children), card, width, srt, at, cpu, io, fp)


def plan_nodes(root: PhysOp):
    yield root
    for c in root.children:
        yield from plan_nodes(c)


def total_est_cost(roots) -> float:
    return sum(op.est_cost for root in roots for op in plan_nodes(root))


@dataclass(frozen=True)
class QueryPlanStats:
    est_cardinality: float
    avg_row_length: float
    row_count: float  # total base rows feeding the query, per the optimizer


@dataclass(frozen=True)
class OptimizedPlan:
    roots: tuple[PhysOp, ...]
    est_cost: float
    signature: RuleSignature
    per_query: tuple[QueryPlanStats, ...]

    def fingerprint(self) -> str:
        return "|".join(r.fp for r in self.roots)


# ---------------------------------------------------------------------------
# Logical rewrite rules
# ---------------------------------------------------------------------------

class _Ctx:
    """Per-compile context: enabled rules, estimator, fired-rule set."""

    def __init__(self, catalog: RuleCatalog, config: RuleConfig, est: Estimator):
        self.catalog = catalog
        self.config = config
        self.est = est
        self.fired: set[int] = set()

    def on(self, name: str) -> bool:
        if not self.catalog.has_name(name):
            return False
        return self.config.enabled(self.catalog.by_name(name).rule_id)

    def fire(self, name: str) -> None:
        self.fired.add(self.catalog.by_name(name).rule_id)


def _normalize(node: Node, ctx: _Ctx) -> Node:
    """Required canonicalization: predicate order is made deterministic."""
    ctx.fire("expr_normalize")

    def walk(n: Node) -> Node:
        if isinstance(n, Scan):
            return n
        if isinstance(n, Filter):
            return Filter(walk(n.child), tuple(sorted(n.preds, key=lambda p: p.pred_id)), n.const_terms)
        if isinstance(n, (Join,)):
            return Join(walk(n.left), walk(n.right), n.kind, n.pairs, n.semi_eligible)
        if isinstance(n, SemiJoin):
            return SemiJoin(walk(n.left), walk(n.right), n.pair)
        if isinstance(n, Union):
            return Union(tuple(walk(c) for c in n.children))
        if isinstance(n, Project):
            return Project(walk(n.child), n.keep)
        if isinstance(n, Aggregate):
            return Aggregate(walk(n.child), n.key, n.partial_eligible, n.eager_eligible)
        if isinstance(n, PartialAggregate):
            return PartialAggregate(walk(n.child), n.key)
        if isinstance(n, EagerAggregate):
            return EagerAggregate(walk(n.child), n.key)
        if isinstance(n, Limit):
            return Limit(walk(n.child), n.n)
        raise TypeError(type(n).__name__)

    return walk(node)


def _rewrite_at(node: Node, ctx: _Ctx):
    """Try each enabled logical rule at this node; return (rule, new) or None."""
    if isinstance(node, Filter):
        if ctx.on("predicate_simplify"):
            # Merge filter chains, then drop duplicate predicates.
            if isinstance(node.child, Filter):
                inner = node.child
                return "predicate_simplify", Filter(
                    inner.child, node.preds + inner.preds, node.const_terms + inner.const_terms
                )
            seen = set()
            deduped = []
            for p in node.preds:
                if p.pred_id not in seen:
                    seen.add(p.pred_id)
                    deduped.append(p)
            if len(deduped) != len(node.preds):
                return "predicate_simplify", Filter(node.child, tuple(deduped), node.const_terms)
        if ctx.on("constant_fold") and node.const_terms > 0:
            return "constant_fold", Filter(node.child, node.preds, 0)
        if ctx.on("filter_pushdown"):
            if isinstance(node.child, Project):
                proj = node.child
                return "filter_pushdown", Project(
                    Filter(proj.child, node.preds, node.const_terms), proj.keep
                )
            if isinstance(node.child, Join):
                join = node.child
                lt, rt = base_tables(join.left), base_tables(join.right)
                lp = tuple(p for p in node.preds if p.table in lt)
                rp = tuple(p for p in node.preds if p.table in rt)
                if lp or rp:
                    left = Filter(join.left, lp, node.const_terms if lp else 0) if lp else join.left
                    right = Filter(join.right, rp, 0 if lp else node.const_terms) if rp else join.right
                    new_join = Join(left, right, join.kind, join.pairs, join.semi_eligible)
                    rest = tuple(p for p in node.preds if p not in lp and p not in rp)
                    return "filter_pushdown", (Filter(new_join, rest, 0) if rest else new_join)
    if isinstance(node, Project):
        if ctx.on("project_prune"):
            if isinstance(node.child, Project):
                inner = node.child
                return "project_prune", Project(inner.child, node.keep * inner.keep)
            if isinstance(node.child, Join):
                join = node.child
                return "project_prune", Join(
                    Project(join.left, node.keep),
                    Project(join.right, node.keep),
                    join.kind,
                    join.pairs,
                    join.semi_eligible,
                )
            if isinstance(node.child, Union):
                return "project_prune", Union(
                    tuple(Project(c, node.keep) for c in node.child.children)
                )
    if isinstance(node, Union) and ctx.on("union_merge"):
        if any(isinstance(c, Union) for c in node.children):
            flat: list[Node] = []
            for c in node.children:
                flat.extend(c.children if isinstance(c, Union) else (c,))
            return "union_merge", Union(tuple(flat))
    if isinstance(node, Limit):
        if ctx.on("limit_pushdown"):
            if isinstance(node.child, Limit):
                return "limit_pushdown", Limit(node.child.child, min(node.n, node.child.n))
            if isinstance(node.child, Project):
                proj = node.child
                return "limit_pushdown", Project(Limit(proj.child, node.n), proj.keep)
            if isinstance(node.child, Union) and not all(
                isinstance(c, Limit) for c in node.child.children
            ):
                return "limit_pushdown", Limit(
                    Union(tuple(Limit(c, node.n) for c in node.child.children)), node.n
                )
    if isinstance(node, Join) and node.semi_eligible and node.kind == "equi":
        if ctx.on("semijoin_reduce"):
            return "semijoin_reduce", SemiJoin(node.left, node.right, node.pairs[0])
    if isinstance(node, Aggregate) and isinstance(node.child, Join):
        if node.eager_eligible and ctx.on("eager_agg"):
            join = node.child
            return "eager_agg", Aggregate(
                Join(
                    EagerAggregate(join.left, node.key + "@eager"),
                    join.right,
                    join.kind,
                    join.pairs,
                    join.semi_eligible,
                ),
                node.key,
                node.partial_eligible,
                False,
            )
        if node.partial_eligible and ctx.on("partialagg_pushdown"):
            join = node.child
            return "partialagg_pushdown", Aggregate(
                Join(
                    PartialAggregate(join.left, node.key + "@partial"),
                    join.right,
                    join.kind,
                    join.pairs,
                    join.semi_eligible,
                ),
                node.key,
                False,
                node.eager_eligible,
            )
    return None


def _rewrite_once(node: Node, ctx: _Ctx):
    hit = _rewrite_at(node, ctx)
    if hit is not None:
        return hit
    if isinstance(node, (Join, SemiJoin)):
        got = _rewrite_once(node.left, ctx)
        if got is not None:
            rule, new = got
            if isinstance(node, Join):
                return rule, Join(new, node.right, node.kind, node.pairs, node.semi_eligible)
            return rule, SemiJoin(new, node.right, node.pair)
        got = _rewrite_once(node.right, ctx)
        if got is not None:
            rule, new = got
            if isinstance(node, Join):
                return rule, Join(node.left, new, node.kind, node.pairs, node.semi_eligible)
            return rule, SemiJoin(node.left, new, node.pair)
        return None
    if isinstance(node, Union):
        for i, c in enumerate(node.children):
            got = _rewrite_once(c, ctx)
            if got is not None:
                rule, new = got
                kids = node.children[:i] + (new,) + node.children[i + 1 :]
                return rule, Union(kids)
        return None
    child = getattr(node, "child", None)
    if child is None:
        return None
    got = _rewrite_once(child, ctx)
    if got is None:
        return None
    rule, new = got
    if isinstance(node, Filter):
        return rule, Filter(new, node.preds, node.const_terms)
    if isinstance(node, Project):
        return rule, Project(new, node.keep)
    if isinstance(node, Aggregate):
        return rule, Aggregate(new, node.key, node.partial_eligible, node.eager_eligible)
    if isinstance(node, PartialAggregate):
        return rule, PartialAggregate(new, node.key)
    if isinstance(node, EagerAggregate):
        return rule, EagerAggregate(new, node.key)
    if isinstance(node, Limit):
        return rule, Limit(new, node.n)
    raise TypeError(type(node).__name__)


def _rewrite_fixpoint(node: Node, ctx: _Ctx) -> Node:
    limit = 400
    for _ in range(limit):
        got = _rewrite_once(node, ctx)
        if got is None:
            return node
        rule, node = got
        ctx.fire(rule)
    raise RuntimeError("logical rewrite did not reach a fixpoint")


# ---------------------------------------------------------------------------
# Join ordering and orientation
# ---------------------------------------------------------------------------

def _region_leaves(node: Node) -> list[Node]:
    if isinstance(node, Join) and node.kind in ("equi", "cross"):
        return _region_leaves(node.left) + _region_leaves(node.right)
    return [node]


def _crossing_pairs(tabs_a, tabs_b, join_sels):
    from .relalg import pair_key

    keys = []
    for a in sorted(tabs_a):
        for b in sorted(tabs_b):
            k = pair_key(a, b)
            if k in join_sels:
                keys.append(k)
    return tuple(keys)


def _join_of(a: Node, b: Node, keys) -> Join:
    return Join(a, b, "equi" if keys else "cross", tuple(keys))


class _Comp:
    """A join-region component during greedy ordering."""

    __slots__ = ("node", "tables", "card")

    def __init__(self, node, tables, card):
        self.node = node
        self.tables = tables
        self.card = card


def _order_region(node: Join, ctx: _Ctx) -> Node:
    leaves = [_order_pass(leaf, ctx) for leaf in _region_leaves(node)]
    if len(leaves) < 2:
        return leaves[0]
    join_sels = ctx.est.stats.join_sels
    comps = [_Comp(lf, base_tables(lf), ctx.est.card(lf)) for lf in leaves]
    allow_cross = ctx.on("crossjoin_reorder")

    def join_card(a: _Comp, b: _Comp, keys) -> float:
        sel = 1.0
        for k in keys:
            sel *= join_sels[k]
        return a.card * b.card * sel

    def merge(a: _Comp, b: _Comp, keys) -> _Comp:
        return _Comp(_join_of(a.node, b.node, keys), a.tables | b.tables, join_card(a, b, keys))

    def greedy_left_deep() -> tuple[Node, bool]:
        pool = list(comps)
        cur = min(pool, key=lambda c: (c.card, c.node.fp if hasattr(c.node, "fp") else 0))
        pool.remove(cur)
        used_elective_cross = False
        while pool:
            best = None
            connected_exists = any(
                _crossing_pairs(cur.tables, c.tables, join_sels) for c in pool
            )
            for cand in pool:
                keys = _crossing_pairs(cur.tables, cand.tables, join_sels)
                if not keys and connected_exists and not allow_cross:
                    continue
                elective = not keys and connected_exists
                card = join_card(cur, cand, keys)
                if best is None or card < best[0]:
                    best = (card, cand, keys, elective)
            card, cand, keys, elective = best
            if elective:
                used_elective_cross = True
            cur = merge(cur, cand, keys)
            pool.remove(cand)
        return cur.node, used_elective_cross

    def greedy_bushy() -> tuple[Node, bool]:
        pool = list(comps)
        used_elective_cross = False
        while len(pool) > 1:
            best = None
            connected_exists = any(
                _crossing_pairs(pool[i].tables, pool[j].tables, join_sels)
                for i in range(len(pool))
                for j in range(i + 1, len(pool))
            )
            for i in range(len(pool)):
                for j in range(i + 1, len(pool)):
                    keys = _crossing_pairs(pool[i].tables, pool[j].tables, join_sels)
                    if not keys and connected_exists and not allow_cross:
                        continue
                    elective = not keys and connected_exists
                    card = join_card(pool[i], pool[j], keys)
                    if best is None or card < best[0]:
                        best = (card, i, j, keys, elective)
            card, i, j, keys, elective = best
            if elective:
                used_elective_cross = True
            merged = merge(pool[i], pool[j], keys)
            pool = [c for k, c in enumerate(pool) if k not in (i, j)] + [merged]
        return pool[0].node, used_elective_cross

    # Rebuild the region with reordered leaves but the original shape.
    rebuilt = _rebuild_shape(node, iter(leaves))
    result = rebuilt
    if ctx.on("join_reorder_greedy"):
        ordered, elective = greedy_left_deep()
        if ordered != result:
            result = ordered
            ctx.fire("join_reorder_greedy")
            if elective:
                ctx.fire("crossjoin_reorder")
    if ctx.on("bushy_join") and len(leaves) >= 3:
        bushy, elective = greedy_bushy()
        if bushy != result:
            result = bushy
            ctx.fire("bushy_join")
            if elective:
                ctx.fire("crossjoin_reorder")
    return result


def _rebuild_shape(node: Node, leaves) -> Node:
    if isinstance(node, Join) and node.kind in ("equi", "cross"):
        left = _rebuild_shape(node.left, leaves)
        right = _rebuild_shape(node.right, leaves)
        return Join(left, right, node.kind, node.pairs, node.semi_eligible)
    return next(leaves)


def _order_pass(node: Node, ctx: _Ctx) -> Node:
    if isinstance(node, Join) and node.kind in ("equi", "cross"):
        return _order_region(node, ctx)
    if isinstance(node, Join):  # theta joins are reorder barriers
        return Join(_order_pass(node.left, ctx), _order_pass(node.right, ctx), node.kind, node.pairs, node.semi_eligible)
    if isinstance(node, SemiJoin):
        return SemiJoin(_order_pass(node.left, ctx), _order_pass(node.right, ctx), node.pair)
    if isinstance(node, Union):
        return Union(tuple(_order_pass(c, ctx) for c in node.children))
    child = getattr(node, "child", None)
    if child is None:
        return node
    new = _order_pass(child, ctx)
    if isinstance(node, Filter):
        return Filter(new, node.preds, node.const_terms)
    if isinstance(node, Project):
        return Project(new, node.keep)
    if isinstance(node, Aggregate):
        return Aggregate(new, node.key, node.partial_eligible, node.eager_eligible)
    if isinstance(node, PartialAggregate):
        return PartialAggregate(new, node.key)
    if isinstance(node, EagerAggregate):
        return EagerAggregate(new, node.key)
    if isinstance(node, Limit):
        return Limit(new, node.n)
    raise TypeError(type(node).__name__)


def _commute_pass(node: Node, ctx: _Ctx) -> Node:
    """Orient every join with the smaller (build) side on the left."""
    if isinstance(node, Join):
        left = _commute_pass(node.left, ctx)
        right = _commute_pass(node.right, ctx)
        if ctx.on("join_commute") and ctx.est.card(left) > ctx.est.card(right):
            ctx.fire("join_commute")
            left, right = right, left
        return Join(left, right, node.kind, node.pairs, node.semi_eligible)
    if isinstance(node, SemiJoin):
        return SemiJoin(_commute_pass(node.left, ctx), _commute_pass(node.right, ctx), node.pair)
    if isinstance(node, Union):
        return Union(tuple(_commute_pass(c, ctx) for c in node.children))
    child = getattr(node, "child", None)
    if child is None:
        return node
    new = _commute_pass(child, ctx)
    if isinstance(node, Filter):
        return Filter(new, node.preds, node.const_terms)
    if isinstance(node, Project):
        return Project(new, node.keep)
    if isinstance(node, Aggregate):
        return Aggregate(new, node.key, node.partial_eligible, node.eager_eligible)
    if isinstance(node, PartialAggregate):
        return PartialAggregate(new, node.key)
    if isinstance(node, EagerAggregate):
        return EagerAggregate(new, node.key)
    if isinstance(node, Limit):
        return Limit(new, node.n)
    raise TypeError(type(node).__name__)


# ---------------------------------------------------------------------------
# Implementation selection and enforcement
# ---------------------------------------------------------------------------

def _site(prefix: str, node: Node, extra: str = "") -> str:
    tabs = ",".join(sorted(base_tables(node)))
    return f"{prefix}:{tabs}" + (f":{extra}" if extra else "")


def _shuffle(child: PhysOp, ctx: _Ctx) -> PhysOp:
    ctx.fire("partition_enforce")
    return _mk("exchange", (child,), child.card, child.width, False, site="exch")


def _sorted_stream(child: PhysOp, ctx: _Ctx) -> PhysOp:
    if child.srt:
        return child
    ctx.fire("property_enforce")
    return _mk("sort", (child,), child.card, child.width, True, site="sort")


def _added_cost(op: PhysOp, below: tuple[PhysOp, ...]) -> float:
    """Cost of `op` and everything beneath it down to (excluding) `below`."""
    stop = {id(b) for b in below}

    def walk(p: PhysOp) -> float:
        if id(p) in stop:
            return 0.0
        return p.est_cost + sum(walk(c) for c in p.children)

    return walk(op)


def _implement(node: Node, ctx: _Ctx) -> PhysOp:
    est = ctx.est
    if isinstance(node, Scan):
        card, width = est.estimate(node)
        return _mk("scan", (), card, width, False, table=node.table, site=f"scan:{node.table}")
    if isinstance(node, Filter):
        child = _implement(node.child, ctx)
        card, width = est.estimate(node)
        terms = len(node.preds) + node.const_terms
        preds = ",".join(p.pred_id for p in node.preds)
        return _mk(
            "filter", (child,), card, width, child.srt,
            terms=terms, site=_site("filter", node, preds),
        )
    if isinstance(node, Project):
        child = _implement(node.child, ctx)
        card, width = est.estimate(node)
        return _mk("project", (child,), card, width, child.srt, keep=round(node.keep, 6), site="project")
    if isinstance(node, Limit):
        child = _implement(node.child, ctx)
        card, width = est.estimate(node)
        return _mk("limit", (child,), card, width, child.srt, n=node.n, site="limit")
    if isinstance(node, Union):
        children = tuple(_implement(c, ctx) for c in node.children)
        card, width = est.estimate(node)
        return _mk("union", children, card, width, False, site=_site("union", node))
    if isinstance(node, PartialAggregate):
        child = _implement(node.child, ctx)
        card, width = est.estimate(node)
        return _mk("partial_agg", (child,), card, width, False, key=node.key, site=_site("pagg", node, node.key))
    if isinstance(node, EagerAggregate):
        child = _implement(node.child, ctx)
        card, width = est.estimate(node)
        return _mk("eager_agg", (child,), card, width, False, key=node.key, site=_site("eagg", node, node.key))
    if isinstance(node, Aggregate):
        child = _implement(node.child, ctx)
        card, width = est.estimate(node)
        site = _site("agg", node, node.key)
        cands = []
        if ctx.on("hash_agg"):
            op = _mk("hash_agg", (_shuffle(child, ctx),), card, width, False, key=node.key, site=site)
            cands.append(("hash_agg", op))
        if ctx.on("sort_agg"):
            op = _mk(
                "sort_agg",
                (_sorted_stream(_shuffle(child, ctx), ctx),),
                card, width, True, key=node.key, site=site,
            )
            cands.append(("sort_agg", op))
        if not cands:
            raise CompileError("no enabled implementation for aggregate")
        rule, op = min(cands, key=lambda rc: (_added_cost(rc[1], (child,)), rc[0]))
        ctx.fire(rule)
        return op
    if isinstance(node, Join):
        left = _implement(node.left, ctx)
        right = _implement(node.right, ctx)
        card, width = est.estimate(node)
        site = _site("join", node)
        cands = []
        for impl in _JOIN_IMPLS[node.kind]:
            if not ctx.on(impl):
                continue
            if impl == "hash_join":
                op = _mk(
                    "hash_join",
                    (_shuffle(left, ctx), _shuffle(right, ctx)),
                    card, width, False, site=site,
                )
            elif impl == "merge_join":
                op = _mk(
                    "merge_join",
                    (
                        _sorted_stream(_shuffle(left, ctx), ctx),
                        _sorted_stream(_shuffle(right, ctx), ctx),
                    ),
                    card, width, True, site=site,
                )
            elif impl == "nestedloop_join":
                op = _mk("nl_join", (left, right), card, width, False, site=site)
            else:  # broadcast_join
                op = _mk("broadcast_join", (left, right), card, width, False, site=site)
            cands.append((impl, op))
        if not cands:
            raise CompileError(f"no enabled implementation for {node.kind} join")
        rule, op = min(cands, key=lambda rc: (_added_cost(rc[1], (left, right)), rc[0]))
        ctx.fire(rule)
        return op
    if isinstance(node, SemiJoin):
        left = _implement(node.left, ctx)
        right = _implement(node.right, ctx)
        card, width = est.estimate(node)
        site = _site("semi", node)
        cands = []
        if ctx.on("hash_join"):
            op = _mk(
                "hash_semi",
                (_shuffle(left, ctx), _shuffle(right, ctx)),
                card, width, False, site=site,
            )
            cands.append(("hash_join", op))
        if ctx.on("nestedloop_join"):
            cands.append(("nestedloop_join", _mk("nl_semi", (left, right), card, width, False, site=site)))
        if ctx.on("broadcast_join"):
            cands.append(("broadcast_join", _mk("broadcast_semi", (left, right), card, width, False, site=site)))
        if not cands:
            raise CompileError("no enabled implementation for semi join")
        rule, op = min(cands, key=lambda rc: (_added_cost(rc[1], (left, right)), rc[0]))
        ctx.fire(rule)
        return op
    raise TypeError(f"cannot implement {type(node).__name__}")


def _finalize_root(root: PhysOp, ctx: _Ctx, dataset: str) -> PhysOp:
    # Partition enforcement always places the output exchange; range
    # partitioning competes when it is enabled and cheaper.
    ctx.fire("partition_enforce")
    cands = [("", _mk("exchange", (root,), root.card, root.width, False, site="exch"))]
    if ctx.on("range_partition"):
        op = _mk(
            "range_exchange",
            (_sorted_stream(root, ctx),),
            root.card, root.width, True, site="rexch",
        )
        cands.append(("range_partition", op))
    rule, op = min(cands, key=lambda rc: (_added_cost(rc[1], (root,)), rc[0]))
    if rule:
        ctx.fire(rule)
    ctx.fire("property_enforce")
    ctx.fire("output_enforce")
    return _mk("output", (op,), op.card, op.width, op.srt, dataset=dataset, site=f"out:{dataset}")


def _query_row_count(node: Node, est: Estimator) -> float:
    if isinstance(node, Scan):
        return est.card(node)
    if isinstance(node, (Join, SemiJoin)):
        return _query_row_count(node.left, est) + _query_row_count(node.right, est)
    if isinstance(node, Union):
        return sum(_query_row_count(c, est) for c in node.children)
    return _query_row_count(node.child, est)


def compile(job: Job, config: RuleConfig, catalog: RuleCatalog | None = None) -> OptimizedPlan:
    """Optimize all queries of a job under `config`.

    Deterministic: identical inputs produce an identical plan, cost, and
    signature. Raises CompileError when the enabled rule set cannot produce
    a valid plan, ValueError when a Required rule is disabled.
    """
    catalog = catalog or default_catalog()
    if config.size != catalog.size:
        raise ValueError("config size does not match catalog size")
    if config.bits & catalog.required_mask != catalog.required_mask:
        raise ValueError("config must keep all Required rules enabled")
    est = Estimator(job.stats)
    ctx = _Ctx(catalog, config, est)
    roots = []
    per_query = []
    for qi, query in enumerate(job.queries):
        t = _normalize(query.root, ctx)
        t = _rewrite_fixpoint(t, ctx)
        t = _order_pass(t, ctx)
        t = _commute_pass(t, ctx)
        p = _implement(t, ctx)
        p = _finalize_root(p, ctx, dataset=f"q{qi}")
        roots.append(p)
        card, width = est.estimate(t)
        per_query.append(QueryPlanStats(card, width, _query_row_count(t, est)))
    sig_bits = 0
    for rid in ctx.fired:
        sig_bits |= 1 << rid
    return OptimizedPlan(
        roots=tuple(roots),
        est_cost=total_est_cost(roots),
        signature=RuleSignature(sig_bits, catalog.size),
        per_query=tuple(per_query),
    )
