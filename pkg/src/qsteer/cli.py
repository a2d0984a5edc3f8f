"""Command-line entry points for the hint pipeline and its harnesses."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bandit import LearnConfig, learn, read_decision_log, read_policy, write_policy
from .catalog import default_catalog
from .executor import NoiseModel
from .flightsim import FlightBudget, aa_run
from .pipeline import (
    RunDayPaths,
    compile_with_hints,
    parse_hints,
    report_metrics,
    run_day,
)
from .span import brute_force_affecting_rules, compute_span
from .validation import (
    load_validation_model,
    read_flight_samples,
    save_validation_model,
    train_validation_model,
)
from .workload import (
    WorkloadSpec,
    jobs_path_for,
    read_jobs,
    read_view,
    write_workload_files,
)


def _cmd_gen_workload(args) -> int:
    spec = WorkloadSpec(
        n_templates=args.templates,
        runs_per_template_per_day=args.runs,
        days=args.days,
        planted_improvable_fraction=args.planted_fraction,
        seed=args.seed,
        start_date=args.start_date,
    )
    manifest = write_workload_files(spec, args.out)
    print(f"wrote {spec.days} days under {args.out} (manifest {manifest})")
    return 0


def _cmd_run_day(args) -> int:
    policy = read_policy(args.policy) if args.policy else None
    vmodel = load_validation_model(args.vmodel) if args.vmodel else None
    budget = FlightBudget(
        queue_size=args.flight_queue,
        total_budget_s=args.flight_budget_s,
        est_cost_delta_threshold=args.est_delta_threshold,
    )
    paths = RunDayPaths(
        hints=Path(args.out_hints),
        report=Path(args.out_report),
        decision_log=Path(args.out_log),
        flight_samples=Path(args.out_flights),
    )
    result = run_day(
        args.view,
        policy,
        vmodel,
        budget,
        args.threshold,
        args.seed,
        args.mode,
        paths,
        jobs_path=args.jobs,
        validation_enabled=not args.no_validation,
    )
    c = result.report.counts
    print(
        f"jobs={c['jobs']} spans={c['nonempty_spans']} recompiled={c['recompiled']} "
        f"survivors={c['survivors']} flown={c['flown']} hints={c['hinted_templates']}"
    )
    return 0


def _cmd_report(args) -> int:
    from .executor import execute_job
    from .hashing import combine, stable_hash
    from . import optimizer

    catalog = default_catalog()
    records = read_view(args.view)
    jobs = read_jobs(args.jobs or jobs_path_for(args.view))
    hints = {e.template_id: e for e in parse_hints(args.hints)}
    pairs = []
    for job in jobs:
        if job.template_id not in hints:
            continue
        base_plan = optimizer.compile(job, catalog.default_config(), catalog)
        treat_plan = compile_with_hints(job, hints, catalog)
        base = execute_job(job, base_plan, combine(stable_hash("report-base"), combine(stable_hash(job.job_id), args.seed)))
        treat = execute_job(job, treat_plan, combine(stable_hash("report-treat"), combine(stable_hash(job.job_id), args.seed)))
        pairs.append((base.metrics, treat.metrics))
    if not pairs:
        print("no jobs matched the hinted templates")
        return 0
    aggregates, _ = report_metrics(pairs)
    lines = [f"hinted jobs: {len(pairs)} (of {len(jobs)}, {len(records)} view rows)"]
    for name, value in aggregates.items():
        lines.append(f"{name}: {value * 100.0:+.2f}%")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_brute_oracle(args) -> int:
    catalog = default_catalog()
    jobs = read_jobs(args.jobs or jobs_path_for(args.view))
    if args.limit:
        jobs = jobs[: args.limit]
    hit = 0
    total = 0
    lines = ["job_id\tspan\toracle\tmissed"]
    for job in jobs:
        span = set(compute_span(job, catalog).span)
        oracle = set(brute_force_affecting_rules(job, catalog))
        hit += len(span & oracle)
        total += len(oracle)
        fmt = lambda ids: ",".join(str(i) for i in sorted(ids)) or "-"
        lines.append(f"{job.job_id}\t{fmt(span)}\t{fmt(oracle)}\t{fmt(oracle - span)}")
    recall = hit / total if total else 1.0
    lines.append(f"# recall\t{recall:.4f}")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(f"span oracle recall over {len(jobs)} jobs: {recall:.4f}")
    return 0


def _cmd_aa_test(args) -> int:
    jobs = read_jobs(jobs_path_for(args.jobs) if str(args.jobs).endswith(".tsv") else args.jobs)
    lines = ["job_id\tlatency_cov\tpn_cov\tdata_read_cov\tdata_written_cov"]
    lat_over = pn_over = data_nonzero = 0
    for job in jobs:
        cov = aa_run(job, n=args.n, seed=args.seed)
        lat_over += cov["latency_s"] > 0.05
        pn_over += cov["pn_hours"] > 0.05
        data_nonzero += cov["data_read"] != 0.0 or cov["data_written"] != 0.0
        lines.append(
            f"{job.job_id}\t{cov['latency_s']:.4f}\t{cov['pn_hours']:.4f}"
            f"\t{cov['data_read']:.4f}\t{cov['data_written']:.4f}"
        )
    n = len(jobs)
    summary = (
        f"# jobs={n} latency_cov>5%: {lat_over}/{n}  pn_cov>5%: {pn_over}/{n}  "
        f"nonzero data cov: {data_nonzero}/{n}"
    )
    lines.append(summary)
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(summary.lstrip("# "))
    return 0


def _cmd_learn(args) -> int:
    records = []
    for path in args.log:
        records.extend(read_decision_log(path))
    config = LearnConfig(
        d_bits=args.d_bits,
        learning_rate=args.lr,
        epochs=args.epochs,
        l2=args.l2,
        seed=args.seed,
    )
    policy = learn(records, config)
    write_policy(policy, args.out)
    print(f"trained on {len(records)} decisions -> {args.out}")
    return 0


def _cmd_train_vmodel(args) -> int:
    samples = []
    for path in args.samples:
        samples.extend(read_flight_samples(path))
    model = train_validation_model(samples)
    save_validation_model(model, args.out)
    r2 = "n/a" if model.heldout_r2 is None else f"{model.heldout_r2:.3f}"
    print(
        f"trained on {len(samples)} samples: w0={model.w0:.4f} "
        f"w_read={model.w_read:.4f} w_write={model.w_write:.4f} heldout R2={r2}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsteer",
        description="Single-rule-flip hint pipeline for the miniature rule optimizer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-workload", help="generate a synthetic recurring-job workload")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--templates", type=int, default=60)
    p.add_argument("--runs", type=int, default=4)
    p.add_argument("--days", type=int, default=11)
    p.add_argument("--planted-fraction", type=float, default=0.5)
    p.add_argument("--start-date", default="2026-07-01")
    p.set_defaults(fn=_cmd_gen_workload)

    p = sub.add_parser("run-day", help="run one pipeline day over a view file")
    p.add_argument("--view", required=True)
    p.add_argument("--jobs", help="job sidecar (defaults to the view's sibling)")
    p.add_argument("--policy")
    p.add_argument("--vmodel")
    p.add_argument("--out-hints", required=True)
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-log", required=True)
    p.add_argument("--out-flights", required=True)
    p.add_argument("--flight-queue", type=int, default=8)
    p.add_argument("--flight-budget-s", type=float, default=14400.0)
    p.add_argument("--est-delta-threshold", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=-0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("log", "exploit"), default="log")
    p.add_argument("--no-validation", action="store_true")
    p.set_defaults(fn=_cmd_run_day)

    p = sub.add_parser("report", help="baseline-vs-hinted comparison for a day")
    p.add_argument("--view", required=True)
    p.add_argument("--jobs")
    p.add_argument("--hints", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("brute-oracle", help="exhaustive single-flip span oracle")
    p.add_argument("--view")
    p.add_argument("--jobs")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_brute_oracle)

    p = sub.add_parser("aa-test", help="same-config variance harness")
    p.add_argument("--jobs", required=True, help="view file or job sidecar")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_aa_test)

    p = sub.add_parser("learn", help="train the hint policy from decision logs")
    p.add_argument("--log", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d-bits", type=int, default=18)
    p.add_argument("--lr", type=float, default=0.25)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--l2", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_learn)

    p = sub.add_parser("train-vmodel", help="fit the regression guard from flight samples")
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_vmodel)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "brute-oracle" and not (args.view or args.jobs):
        print("brute-oracle needs --view or --jobs", file=sys.stderr)
        return 2
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
