"""Command-line interface.

Subcommands: ``plan`` a task file, run a ``bench`` suite or a ``stress``
grid, ``score`` a plan trace against a dataset, ``replan-sim`` a task under
an injected disturbance, and ``gen-data`` to produce an offline corpus.
All outputs are machine-readable text/CSV files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .consistency import DcmConfig, score as dcm_score
from .dataset import downsample_dataset, load_dataset
from .generate import read_plan_trace, write_plan_trace
from .pipeline import plan_variant
from .sim import DoubleIntegratorEnv, ExecutorConfig, ReplanHooks, execute_plan, generate_offline_data, load_env_config


def _load_env(args) -> tuple:
    if getattr(args, "env", None):
        return load_env_config(args.env)
    return DoubleIntegratorEnv(), ExecutorConfig()


def cmd_plan(args) -> int:
    env, exec_cfg = _load_env(args)
    tasks = bench_mod.load_tasks(args.task_file)
    options = bench_mod.BenchOptions(eta=exec_cfg.eta, k=exec_cfg.k)
    if args.predictor:
        options.predictor = args.predictor
    ds_fine = ds_score = None
    if args.dataset:
        ds_fine = load_dataset(args.dataset)
        ds_score = downsample_dataset(ds_fine, options.eta)
    elif options.predictor == "knn":
        options.predictor = "euclidean"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for task in tasks:
        ctx = bench_mod.make_task_context(task, env, options, ds_fine, ds_score)
        rng = np.random.default_rng(args.seed)
        attempt = plan_variant(args.variant, ctx, rng)
        if attempt.plan is None:
            print(f"{task.name}: no plan (allocated={attempt.allocated})")
            failures += 1
            continue
        trace = out_dir / f"{task.name}.plan"
        write_plan_trace(
            trace,
            task.name,
            attempt.plan,
            stats=f"nodes={attempt.nodes} completions={attempt.completions} "
            f"seconds={attempt.seconds:.4f}",
        )
        print(
            f"{task.name}: robustness={attempt.robustness:.4f} "
            f"nodes={attempt.nodes} -> {trace}"
        )
    return 1 if failures else 0


def cmd_bench(args) -> int:
    cfg = bench_mod.parse_config(args.config)
    record = bench_mod.run_benchmark(cfg, args.out)
    for (group, variant), m in record.aggregates.items():
        print(
            f"template {group} {variant}: SR0={m['sr0']:.3f} SR={m['sr']:.3f} "
            f"RV={m['rv']:.4f} PT={m['pt']:.3f}s"
        )
    print(f"per-case CSV: {Path(args.out) / 'cases.csv'}")
    return 0


def cmd_stress(args) -> int:
    cfg = bench_mod.parse_config(args.config)
    record = bench_mod.run_stress_grid(cfg, args.out)
    for (group, variant), m in record.aggregates.items():
        print(f"{group} {variant}: SR0={m['sr0']:.3f} SR={m['sr']:.3f}")
    print(f"per-case CSV: {Path(args.out) / 'stress_cases.csv'}")
    return 0


def cmd_score(args) -> int:
    task_id, plan = read_plan_trace(args.plan)
    ds = downsample_dataset(load_dataset(args.dataset), plan.eta)
    report = dcm_score(plan, ds, DcmConfig())
    print(f"plan {task_id}: S={report.score:.6f}")
    print("tail indices: " + " ".join(str(i) for i in report.tail))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("step,c_total,c_state,c_trans,c_step\n")
            for t in range(len(report.step_costs)):
                fh.write(
                    f"{t},{report.step_costs[t]:.9f},{report.c_state[t]:.9f},"
                    f"{report.c_trans[t]:.9f},{report.c_step[t]:.9f}\n"
                )
        print(f"per-step costs: {args.csv}")
    return 0


def cmd_replan_sim(args) -> int:
    env, exec_cfg = _load_env(args)
    if args.disturb:
        parts = [float(v) for v in args.disturb.split(",")]
        exec_cfg.disturbance = (int(parts[0]), parts[1:])
    tasks = bench_mod.load_tasks(args.task_file)
    options = bench_mod.BenchOptions(eta=exec_cfg.eta, k=exec_cfg.k)
    ds_fine = ds_score = None
    if args.dataset:
        ds_fine = load_dataset(args.dataset)
        ds_score = downsample_dataset(ds_fine, options.eta)
    else:
        options.predictor = "euclidean"
    code = 0
    for task in tasks:
        ctx = bench_mod.make_task_context(task, env, options, ds_fine, ds_score)
        rng = np.random.default_rng(args.seed)
        attempt = plan_variant("B", ctx, rng)
        if attempt.plan is None:
            print(f"{task.name}: no plan")
            code = 1
            continue
        hooks = None
        if not args.no_replan:
            hooks = ReplanHooks(
                cfg=options.replan,
                d=ctx.d,
                sampler=ctx.sampler,
                predictor=ctx.predictor,
                gen=ctx.gen,
                limits=ctx.limits,
                budget=ctx.ars_budget,
                rng=np.random.default_rng(args.seed + 1),
            )
        outcome = execute_plan(attempt.plan, ctx.formula, env, exec_cfg, hooks)
        print(
            f"{task.name}: outcome={outcome.outcome} "
            f"robustness={outcome.robustness:.4f} events={len(outcome.events)}"
        )
        if args.trace:
            _write_exec_trace(args.trace, task.name, outcome)
            print(f"execution trace: {args.trace}")
    return code


def _write_exec_trace(path, name, outcome) -> None:
    lines = [f"execution {name}", f"outcome {outcome.outcome}",
             f"robustness {outcome.robustness!r}"]
    for ev in outcome.events:
        lines.append(
            f"event {ev.t} {ev.error!r} {ev.regime} {ev.outcome} {ev.wall_time!r}"
        )
    lines.append("fine")
    for row in outcome.trajectory:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_gen_data(args) -> int:
    env, exec_cfg = _load_env(args)
    n = generate_offline_data(
        env, args.trajectories, args.seed, args.out, eta=exec_cfg.eta, k=exec_cfg.k
    )
    print(f"wrote {n} trajectories to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stlplan",
        description="Plan state trajectories for STL tasks from offline data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan every task in a task file")
    p.add_argument("task_file")
    p.add_argument("--env", help="environment config file")
    p.add_argument("--dataset", help="offline dataset for the kNN predictor")
    p.add_argument("--variant", default="B", choices=["B", "ARS-FS", "ARS"])
    p.add_argument("--predictor", choices=["knn", "manhattan", "euclidean"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="plans")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="run a benchmark suite config")
    p.add_argument("config")
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stress", help="run a stress-grid config")
    p.add_argument("config")
    p.add_argument("--out", default="stress_out")
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("score", help="consistency-score a plan trace")
    p.add_argument("plan")
    p.add_argument("dataset")
    p.add_argument("--csv", help="write per-step costs here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("replan-sim", help="execute with disturbance + replanning")
    p.add_argument("task_file")
    p.add_argument("--env")
    p.add_argument("--dataset")
    p.add_argument("--disturb", help="t,dx,dy teleport at planning step t")
    p.add_argument("--no-replan", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write the execution trace here")
    p.set_defaults(func=cmd_replan_sim)

    p = sub.add_parser("gen-data", help="generate an offline trajectory corpus")
    p.add_argument("--env")
    p.add_argument("--trajectories", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.txt")
    p.set_defaults(func=cmd_gen_data)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
