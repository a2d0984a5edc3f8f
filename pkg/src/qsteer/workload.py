"""Synthetic recurring-job workload generation and the view file format.

Templates are generated once per workload; each day every template yields a
few job instances whose input statistics jitter around the template baseline.
A configurable fraction of templates is planted with a structural lever that
gives them at least one strictly cost-improving single-rule flip; the rest
are drawn to make flips neutral or harmful.

The view file is the pipeline's daily input: UTF-8, newline-delimited,
tab-separated with a header, one record per (job, query), reals rendered at
9 significant digits. All reals are quantized at record creation so the file
round-trips bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .catalog import RuleCatalog, default_catalog
from .executor import NoiseModel, execute_job
from .hashing import stable_hash
from . import optimizer
from .relalg import (
    Aggregate,
    Filter,
    InputStats,
    Job,
    Join,
    Limit,
    Pred,
    Project,
    Query,
    Scan,
    Union,
    job_from_json,
    job_to_json,
    pair_key,
)


def round9(x: float) -> float:
    """Quantize to 9 significant digits; fixed point for the view format."""
    return float(f"{float(x):.9g}")


@dataclass(frozen=True)
class TableUniverse:
    min_rows: float = 2.0e4
    max_rows: float = 3.0e7
    min_width: float = 24.0
    max_width: float = 400.0


@dataclass(frozen=True)
class WorkloadSpec:
    n_templates: int
    runs_per_template_per_day: int
    days: int
    table_universe: TableUniverse = field(default_factory=TableUniverse)
    planted_improvable_fraction: float = 0.5
    seed: int = 0
    start_date: str = "2026-07-01"


_LEVERS = ("eager", "broadcast", "partial_hurt", "semi_hurt")


@dataclass(frozen=True)
class Template:
    index: int
    template_id: str
    normalized_name: str
    queries: tuple[Query, ...]
    base_rows: dict
    widths: dict
    base_sels: dict
    fanouts: dict  # pair key -> (denominator table, fanout)
    base_groups: dict
    lever: str


def _log_uniform(rng, lo: float, hi: float) -> float:
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def _gen_query(rng, spec: WorkloadSpec, t_idx: int, q_idx: int, lever: str):
    """Build one query tree plus its baseline statistics contributions."""
    uni = spec.table_universe
    prefix = f"t{t_idx:04d}q{q_idx}"
    base_rows: dict = {}
    widths: dict = {}
    base_sels: dict = {}
    fanouts: dict = {}
    base_groups: dict = {}

    def new_table(rows_lo, rows_hi, w_lo=None, w_hi=None) -> str:
        name = f"{prefix}_{len(base_rows)}"
        base_rows[name] = _log_uniform(rng, rows_lo, rows_hi)
        widths[name] = rng.uniform(w_lo or uni.min_width, w_hi or uni.max_width)
        return name

    shape = "join"
    if lever == "":
        shape = rng.choice(["scan_only", "join", "union"], p=[0.10, 0.77, 0.13])

    if shape == "scan_only":
        t = new_table(uni.min_rows, uni.max_rows)
        root = Scan(t)
        if rng.random() < 0.6:
            pid = f"p{prefix}_0"
            base_sels[pid] = _log_uniform(rng, 0.02, 0.8)
            root = Filter(root, (Pred(pid, t),))
        return Query(root, f"tpl{t_idx:04d}/q{q_idx}"), base_rows, widths, base_sels, fanouts, base_groups

    if shape == "union":
        n_branch = int(rng.integers(2, 4))
        branches = []
        for _ in range(n_branch):
            t = new_table(uni.min_rows, uni.max_rows / 10)
            br = Scan(t)
            if rng.random() < 0.5:
                pid = f"p{prefix}_{len(base_sels)}"
                base_sels[pid] = _log_uniform(rng, 0.05, 0.8)
                br = Filter(br, (Pred(pid, t),))
            branches.append(br)
        # Built as nested binary unions so union_merge has work to do.
        root = branches[0]
        for br in branches[1:]:
            root = Union((root, br))
        if rng.random() < 0.4:
            key = f"g{prefix}"
            base_groups[key] = _log_uniform(rng, 0.02, 0.4)
            root = Aggregate(root, key)
        if rng.random() < 0.5:
            root = Project(root, rng.uniform(0.3, 0.9))
        return Query(root, f"tpl{t_idx:04d}/q{q_idx}"), base_rows, widths, base_sels, fanouts, base_groups

    # Join-chain shapes, including all planted levers.
    n_tables = int(rng.integers(2, 5))
    want_agg = rng.random() < 0.5
    semi = False
    theta = False
    if lever == "eager":
        want_agg = True
        n_tables = min(n_tables, 3)
    elif lever == "partial_hurt":
        want_agg = True
        n_tables = 2
    elif lever == "semi_hurt":
        want_agg = False
        semi = True
        n_tables = 2
    elif lever == "broadcast":
        want_agg = False
        n_tables = 2
    else:
        semi = rng.random() < 0.22
        theta = not semi and rng.random() < 0.12

    theta_at = 1 if theta else -1
    tables = []
    for i in range(n_tables):
        if lever == "broadcast":
            # Fact joined against a dim sized so a replicated build beats
            # the repartitioned hash join but a nested loop does not: big
            # enough that the quadratic nested-loop term is hopeless, small
            # enough that copying it to every partition stays far cheaper
            # than shuffling the fact, with margin to spare on both sides
            # against a few-fold cardinality estimation error.
            if i == 0:
                tables.append(new_table(8.0e6, 1.6e7, 60.0, 120.0))
            else:
                tables.append(new_table(7.0e4, 1.6e5, 60.0, 110.0))
        elif lever == "semi_hurt":
            # Wide probe against a narrow key side: the flat per-key build
            # charge of the semi join outweighs a width-scaled plain build,
            # by a margin rather than a blowout. The probe is sized up so
            # these templates land mid-pack in the flight cost ordering.
            if i == 0:
                tables.append(new_table(2.8e6, 7.0e6, 140.0, 320.0))
            else:
                tables.append(new_table(8.0e5, 2.4e6, 20.0, 45.0))
        elif lever == "partial_hurt":
            # The big driving table keeps these near the top of the flight
            # cost ordering, so they are recommended far more often than
            # they are flown. That mirrors how an estimate-only pipeline
            # gets burned: the misestimated rewrites it ships are exactly
            # the ones too expensive to have been vetted.
            tables.append(new_table(2.0e7, 4.5e7) if i == 0 else new_table(1.0e5, 4.0e5))
        elif lever == "eager":
            # Mid-sized: large enough that collapsing early pays, small enough
            # that the template stays cheap in the flight ordering. These are
            # the cleanest read-coupled wins, so they should fly often.
            tables.append(new_table(4.0e5, 2.4e6) if i == 0 else new_table(uni.min_rows, uni.max_rows / 5))
        elif theta and i <= 1:
            # Theta joins lower to nested loops; keep both inputs small so
            # the quadratic work stays in the same league as the rest.
            tables.append(new_table(uni.min_rows, 5.0e4))
        else:
            tables.append(new_table(uni.min_rows, uni.max_rows))
    if lever == "":
        # Baseline templates come pre-ordered so the greedy reorder usually
        # reproduces them; improving flips stay concentrated in the levers.
        tables.sort(key=lambda t: base_rows[t])
    root = Scan(tables[0])
    for i in range(1, n_tables):
        key = pair_key(tables[i - 1], tables[i])
        if lever == "semi_hurt" and i == n_tables - 1:
            fan = rng.uniform(0.7, 0.95)
        elif lever == "broadcast" and i == n_tables - 1:
            fan = rng.uniform(0.05, 0.15)
        elif lever == "partial_hurt":
            # Selective join: the pre-shuffle aggregate narrows rows, and a
            # fat join output would let that narrowing pay for itself.
            fan = rng.uniform(0.05, 0.2)
        elif lever == "eager":
            fan = rng.uniform(0.8, 2.4)
        elif semi and i == n_tables - 1:
            fan = rng.uniform(1.5, 8.0)
        else:
            fan = _log_uniform(rng, 0.2, 12.0)
        fanouts[key] = (tables[i], fan)
        kind = "theta" if i == theta_at else "equi"
        swap = lever == "" and rng.random() < 0.3
        root = Join(Scan(tables[i]), root, kind, (key,)) if swap else Join(
            root, Scan(tables[i]), kind, (key,)
        )
    if (semi or lever == "semi_hurt") and isinstance(root, Join) and root.kind == "equi":
        root = Join(root.left, root.right, root.kind, root.pairs, semi_eligible=True)

    if lever == "semi_hurt":
        pred_tables = [tables[0]]
    elif lever:
        pred_tables = []
    else:
        pred_tables = [t for t in tables if rng.random() < 0.6]
    preds = []
    for t in pred_tables:
        n_preds = 1 if lever else int(rng.integers(1, 3))
        for _ in range(n_preds):
            pid = f"p{prefix}_{len(base_sels)}"
            if lever == "semi_hurt":
                base_sels[pid] = _log_uniform(rng, 0.15, 0.5)
            else:
                base_sels[pid] = _log_uniform(rng, 0.02, 0.8)
            preds.append(Pred(pid, t))
    if preds and lever == "" and rng.random() < 0.2:
        preds.append(preds[0])  # redundant predicate; simplify lever
    const_terms = int(rng.choice([0, 1, 2], p=[0.6, 0.25, 0.15])) if preds else 0
    if preds:
        root = Filter(root, tuple(preds), const_terms)

    if want_agg:
        key = f"g{prefix}"
        if lever == "eager":
            # Collapse hard enough that even a badly misestimated group count
            # still pays for the extra pre-join aggregate.
            g = _log_uniform(rng, 0.002, 0.02)
            base_groups[key] = g
            base_groups[key + "@eager"] = min(1.0, g * rng.uniform(1.0, 1.6))
            root = Aggregate(root, key, partial_eligible=False, eager_eligible=True)
        elif lever == "partial_hurt":
            g = rng.uniform(0.9, 1.0)
            base_groups[key] = g
            base_groups[key + "@partial"] = min(1.0, g * rng.uniform(1.0, 1.1))
            root = Aggregate(root, key, partial_eligible=True)
        else:
            g = _log_uniform(rng, 0.05, 0.5)
            base_groups[key] = g
            base_groups[key + "@partial"] = min(1.0, g * rng.uniform(1.5, 4.0))
            root = Aggregate(root, key, partial_eligible=True)

    if lever == "broadcast":
        # No projection: pruning would get pushed below the exchanges and
        # shrink the very shuffle the broadcast is meant to save.
        pass
    elif rng.random() < 0.55:
        root = Project(root, rng.uniform(0.3, 0.9))
    if lever == "" and rng.random() < 0.18:
        root = Limit(root, float(int(_log_uniform(rng, 100, 5.0e4))))
    return Query(root, f"tpl{t_idx:04d}/q{q_idx}"), base_rows, widths, base_sels, fanouts, base_groups


def _gen_template(spec: WorkloadSpec, t_idx: int, planted: bool) -> Template:
    rng = np.random.default_rng((spec.seed, 331, t_idx))
    # Heavier on the levers whose wins show up in data movement; the two
    # cpu-side levers stay a minority so flights remain representative of
    # the read/write-coupled majority the validation model assumes.
    lever = str(rng.choice(_LEVERS, p=[0.36, 0.35, 0.20, 0.09])) if planted else ""
    n_queries = 1 if lever else int(rng.choice([1, 2, 3], p=[0.6, 0.25, 0.15]))
    queries = []
    base_rows: dict = {}
    widths: dict = {}
    base_sels: dict = {}
    fanouts: dict = {}
    base_groups: dict = {}
    for q in range(n_queries):
        q_lever = lever if q == 0 else ""
        query, br, w, bs, fo, bg = _gen_query(rng, spec, t_idx, q, q_lever)
        queries.append(query)
        base_rows.update(br)
        widths.update(w)
        base_sels.update(bs)
        fanouts.update(fo)
        base_groups.update(bg)
    tid = f"tpl{t_idx:04d}"
    return Template(
        index=t_idx,
        template_id=tid,
        normalized_name=f"job_{tid}",
        queries=tuple(queries),
        base_rows=base_rows,
        widths=widths,
        base_sels=base_sels,
        fanouts=fanouts,
        base_groups=base_groups,
        lever=lever,
    )


def generate_templates(spec: WorkloadSpec) -> list[Template]:
    n_planted = int(round(spec.planted_improvable_fraction * spec.n_templates))
    order = np.random.default_rng((spec.seed, 17)).permutation(spec.n_templates)
    planted_ids = set(int(i) for i in order[:n_planted])
    return [_gen_template(spec, i, i in planted_ids) for i in range(spec.n_templates)]


def _realize_stats(tpl: Template, rng) -> InputStats:
    rows = {t: max(8.0, r * math.exp(rng.normal(0.0, 0.25))) for t, r in tpl.base_rows.items()}
    sels = {
        p: float(min(0.95, max(1.0e-5, s * math.exp(rng.normal(0.0, 0.1)))))
        for p, s in tpl.base_sels.items()
    }
    join_sels = {}
    for key, (den_table, fan) in tpl.fanouts.items():
        join_sels[key] = float(min(0.9, fan / rows[den_table]))
    groups = {
        k: float(min(1.0, max(1.0e-5, g * math.exp(rng.normal(0.0, 0.05)))))
        for k, g in tpl.base_groups.items()
    }
    return InputStats(rows=rows, widths=dict(tpl.widths), sels=sels, join_sels=join_sels, group_factors=groups)


def _date_for(spec: WorkloadSpec, day: int) -> str:
    import datetime

    start = datetime.date.fromisoformat(spec.start_date)
    return (start + datetime.timedelta(days=day)).isoformat()


def make_job(spec: WorkloadSpec, tpl: Template, day: int, run: int) -> Job:
    rng = np.random.default_rng((spec.seed, 929, tpl.index, day, run))
    date = _date_for(spec, day)
    return Job(
        job_id=f"{tpl.template_id}-{date}-r{run}",
        template_id=tpl.template_id,
        normalized_name=tpl.normalized_name,
        date=date,
        queries=tpl.queries,
        stats=_realize_stats(tpl, rng),
    )


def generate_workload(spec: WorkloadSpec) -> list[list[Job]]:
    """All job instances, grouped by day."""
    templates = generate_templates(spec)
    days = []
    for day in range(spec.days):
        jobs = [
            make_job(spec, tpl, day, run)
            for tpl in templates
            for run in range(spec.runs_per_template_per_day)
        ]
        days.append(jobs)
    return days


# ---------------------------------------------------------------------------
# View records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ViewRecord:
    job_id: str
    template_id: str
    normalized_job_name: str
    query_index: int
    rule_signature: str  # hex bitvector
    estimated_cost: float
    estimated_cardinality: float
    avg_row_length: float
    row_count: float
    bytes_read: float
    latency_s: float
    pn_hours: float
    total_vertices: int
    max_memory_mb: float
    avg_memory_mb: float
    date: str


_VIEW_COLUMNS = tuple(f.name for f in fields(ViewRecord))
_VIEW_FLOAT_COLS = {
    "estimated_cost", "estimated_cardinality", "avg_row_length", "row_count",
    "bytes_read", "latency_s", "pn_hours", "max_memory_mb", "avg_memory_mb",
}
_VIEW_INT_COLS = {"query_index", "total_vertices"}


class ViewFormatError(ValueError):
    pass


def build_view_records(
    jobs: list[Job],
    seed: int,
    catalog: RuleCatalog | None = None,
    noise: NoiseModel | None = None,
) -> list[ViewRecord]:
    """Compile and execute each job under the default config, one record per query."""
    catalog = catalog or default_catalog()
    config = catalog.default_config()
    records = []
    for job in jobs:
        plan = optimizer.compile(job, config, catalog)
        run = execute_job(job, plan, run_seed=(stable_hash("view-run") ^ seed) & ((1 << 62) - 1), noise=noise)
        for qi, qstats in enumerate(plan.per_query):
            records.append(
                ViewRecord(
                    job_id=job.job_id,
                    template_id=job.template_id,
                    normalized_job_name=job.normalized_name,
                    query_index=qi,
                    rule_signature=plan.signature.to_hex(),
                    estimated_cost=round9(plan.est_cost),
                    estimated_cardinality=round9(qstats.est_cardinality),
                    avg_row_length=round9(qstats.avg_row_length),
                    row_count=round9(qstats.row_count),
                    bytes_read=round9(run.per_query_bytes_read[qi]),
                    latency_s=round9(run.metrics.latency_s),
                    pn_hours=round9(run.metrics.pn_hours),
                    total_vertices=run.metrics.total_vertices,
                    max_memory_mb=round9(run.max_memory_mb),
                    avg_memory_mb=round9(run.avg_memory_mb),
                    date=job.date,
                )
            )
    return records


def write_view(records: list[ViewRecord], path: str | Path) -> None:
    lines = ["\t".join(_VIEW_COLUMNS)]
    for r in records:
        cells = []
        for col in _VIEW_COLUMNS:
            v = getattr(r, col)
            if col in _VIEW_FLOAT_COLS:
                cells.append(f"{v:.9g}")
            else:
                cells.append(str(v))
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_view(path: str | Path) -> list[ViewRecord]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ViewFormatError(f"{path}: empty file, expected a header line")
    header = tuple(lines[0].split("\t"))
    if header != _VIEW_COLUMNS:
        raise ViewFormatError(f"{path}:1: bad header")
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(_VIEW_COLUMNS):
            raise ViewFormatError(
                f"{path}:{lineno}: expected {len(_VIEW_COLUMNS)} fields, got {len(parts)}"
            )
        kwargs = {}
        for col, cell in zip(_VIEW_COLUMNS, parts):
            try:
                if col in _VIEW_FLOAT_COLS:
                    kwargs[col] = float(cell)
                elif col in _VIEW_INT_COLS:
                    kwargs[col] = int(cell)
                else:
                    kwargs[col] = cell
            except ValueError:
                raise ViewFormatError(f"{path}:{lineno}: bad value {cell!r} for {col}") from None
        records.append(ViewRecord(**kwargs))
    return records


# ---------------------------------------------------------------------------
# Jobs sidecar (the stand-in for re-optimizing stored job scripts)
# ---------------------------------------------------------------------------

def write_jobs(jobs: list[Job], path: str | Path) -> None:
    Path(path).write_text("\n".join(job_to_json(j) for j in jobs) + "\n", encoding="utf-8")


def read_jobs(path: str | Path) -> list[Job]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(job_from_json(line))
    return out


def jobs_path_for(view_path: str | Path) -> Path:
    p = Path(view_path)
    if p.name.startswith("view_") and p.suffix == ".tsv":
        return p.with_name("jobs_" + p.name[len("view_"):-len(".tsv")] + ".jsonl")
    return p.with_suffix(".jobs.jsonl")


def write_workload_files(spec: WorkloadSpec, out_dir: str | Path, noise: NoiseModel | None = None):
    """Emit per-day (view, jobs) file pairs plus a manifest; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    day_jobs = generate_workload(spec)
    manifest = ["day\tdate\tview\tjobs"]
    pairs = []
    for day, jobs in enumerate(day_jobs):
        date = _date_for(spec, day)
        view_path = out / f"view_{date}.tsv"
        jobs_path = out / f"jobs_{date}.jsonl"
        write_view(build_view_records(jobs, spec.seed, noise=noise), view_path)
        write_jobs(jobs, jobs_path)
        manifest.append(f"{day}\t{date}\t{view_path.name}\t{jobs_path.name}")
        pairs.append((view_path, jobs_path))
    (out / "manifest.tsv").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return pairs
