"""Task templates, feasibility screening, stress tests, metrics, suites.

Formula templates cover reach-avoid, multi-goal conjunctions, bounded
until, nested eventualities, and dwell requirements; concrete tasks sample
interval bounds and circular regions inside the environment workspace.
Unbounded always-operators close to [0, H_task], where H_task is the
horizon implied by the remaining intervals.

The combinatorial stress family places n goal regions around the central
obstacle under one shared deadline D = ceil((1+rho) * T*), where T* sums
calibrated per-segment horizons along a hidden witness order; instances are
kept only when executing the witness order end to end satisfies the task.
"""

from __future__ import annotations

import csv
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .allocate import AllocationLimits, RegionSampler
from .consistency import DcmConfig
from .dataset import Dataset, downsample_dataset, load_dataset
from .decompose import Decomposition, decompose, eliminate_disjunctions, preprocess
from .generate import SegmentSpec, generate_segment, write_plan_trace
from .pipeline import (
    PLANNER_OF_VARIANT,
    PlanAttempt,
    TaskContext,
    VARIANTS,
    plan_variant,
)
from .predict import HeuristicTimePredictor, KnnTimePredictor
from .refine import ArsBudget
from .replan import ReplanConfig
from .sim import (
    DoubleIntegratorEnv,
    ExecutorConfig,
    ReplanHooks,
    execute_plan,
    generate_offline_data,
    _rollout,
)
from .stl import Formula, Predicate, close_unbounded, horizon, parse_formula

__all__ = [
    "TemplateConfig",
    "TaskInstance",
    "BenchOptions",
    "MetricsRecord",
    "instantiate_template",
    "screen_task",
    "build_stress_task",
    "make_task_context",
    "run_case",
    "run_benchmark",
    "run_stress_grid",
    "load_tasks",
    "save_tasks",
    "parse_config",
    "trimmed_mean",
]

TEMPLATE_COUNT = 9


@dataclass
class TemplateConfig:
    goal_radius: Tuple[float, float] = (0.5, 0.9)
    avoid_radius: Tuple[float, float] = (0.6, 1.2)
    interval_start: Tuple[int, int] = (0, 5)
    interval_width: Tuple[int, int] = (15, 30)
    dwell: Tuple[int, int] = (2, 6)
    big_radius: Tuple[float, float] = (2.5, 3.4)
    clearance: float = 0.2


@dataclass
class TaskInstance:
    template: int
    name: str
    formula_text: str
    predicates: List[Tuple[str, str, float, float, float]]  # (kind, id, cx, cy, r)
    init: np.ndarray
    horizon: int
    seed: int
    screened: bool = False
    witness_robustness: Optional[float] = None

    def predicate_table(self) -> Dict[str, Predicate]:
        table = {}
        for kind, name, cx, cy, r in self.predicates:
            if kind == "ball":
                table[name] = Predicate.ball(name, (cx, cy), r)
            elif kind == "not-ball":
                table[name] = Predicate.ball_complement(name, (cx, cy), r)
            else:
                raise ValueError(f"unknown predicate kind {kind!r}")
        return table

    def build(self) -> Tuple[Formula, Decomposition]:
        """Closed formula and its preprocessed decomposition (the first
        disjunction-free branch; templates produce none anyway)."""
        f = parse_formula(self.formula_text, self.predicate_table())
        f = close_unbounded(f, self.horizon)
        branches = eliminate_disjunctions(f)
        return f, preprocess(decompose(branches[0]))


# ---------------------------------------------------------------------------
# Template instantiation
# ---------------------------------------------------------------------------


def _interval(rng, cfg: TemplateConfig) -> Tuple[int, int]:
    a = int(rng.integers(cfg.interval_start[0], cfg.interval_start[1] + 1))
    w = int(rng.integers(cfg.interval_width[0], cfg.interval_width[1] + 1))
    return a, a + w


def _sample_goal(env, rng, cfg, inside: Optional[Tuple[np.ndarray, float]] = None):
    for _ in range(500):
        r = float(rng.uniform(*cfg.goal_radius))
        lo = env.lo + r + cfg.clearance
        hi = env.hi - r - cfg.clearance
        c = rng.uniform(lo, hi)
        if env.clearance(c) < r + cfg.clearance:
            continue
        if inside is not None:
            big_c, big_r = inside
            if np.linalg.norm(c - big_c) > big_r - r - 0.15:
                continue
        return float(c[0]), float(c[1]), r
    raise RuntimeError("could not sample a goal region")


def _sample_avoid(env, rng, cfg, keep_clear: Sequence[Tuple[float, float, float]]):
    for _ in range(500):
        r = float(rng.uniform(*cfg.avoid_radius))
        c = rng.uniform(env.lo + 0.2, env.hi - 0.2)
        if all(
            np.linalg.norm(c - np.array([gx, gy])) >= r + gr + 0.2
            for gx, gy, gr in keep_clear
        ):
            return float(c[0]), float(c[1]), r
    raise RuntimeError("could not sample an avoid region")


def _sample_init(env, rng, cfg, avoid_regions, exclude=()):
    for _ in range(500):
        p = env.free_position(rng, margin=cfg.clearance)
        if any(
            np.linalg.norm(p - np.array([cx, cy])) < r + 0.15
            for cx, cy, r in tuple(avoid_regions) + tuple(exclude)
        ):
            continue
        return p
    raise RuntimeError("could not sample an initial state")


def instantiate_template(
    template: int,
    env: DoubleIntegratorEnv,
    rng: np.random.Generator,
    cfg: Optional[TemplateConfig] = None,
    seed: int = 0,
    name: str = "",
) -> TaskInstance:
    """Concrete task from one of the nine formula templates."""
    cfg = cfg or TemplateConfig()
    if not 1 <= template <= TEMPLATE_COUNT:
        raise ValueError(f"template must be 1..{TEMPLATE_COUNT}")
    ivs = [_interval(rng, cfg) for _ in range(4)]
    i1, i2, i3, i4 = (f"[{a},{b}]" for a, b in ivs)
    dwell = int(rng.integers(cfg.dwell[0], cfg.dwell[1] + 1))
    dw = f"[0,{dwell}]"
    preds: List[Tuple[str, str, float, float, float]] = []
    goals: List[Tuple[float, float, float]] = []
    avoids: List[Tuple[float, float, float]] = []

    def goal(n: int, inside=None):
        for _ in range(n):
            g = _sample_goal(env, rng, cfg, inside)
            goals.append(g)
            preds.append(("ball", f"mu{len(preds) + 1}", *g))

    def avoid(n: int):
        for _ in range(n):
            a = _sample_avoid(env, rng, cfg, goals)
            avoids.append(a)
            preds.append(("ball", f"mu{len(preds) + 1}", *a))

    if template == 1:
        goal(1)
        avoid(1)
        text = f"(F{i1} mu1 & G ~mu2)"
    elif template == 2:
        goal(2)
        text = f"(F{i1} mu1 & F{i2} mu2)"
    elif template == 3:
        goal(2)
        text = f"(F{i1} mu1 & (~mu1 U{i1} mu2))"
    elif template == 4:
        goal(4)
        text = (
            f"F{i1} (mu1 & F{i2} (mu2 & F{i3} (mu3 & F{i4} mu4)))"
        )
    elif template == 5:
        goal(3)
        avoid(2)
        text = f"(F{i1} (mu1 & F{i2} (mu2 & F{i3} mu3)) & G (~mu4 & ~mu5))"
    elif template == 6:
        goal(3)
        avoid(1)
        text = f"(F{i1} mu1 & F{i2} mu2 & F{i3} mu3 & G ~mu4)"
    elif template == 7:
        goal(2)
        avoid(1)
        text = f"(F{i1} G{dw} mu1 & F{i3} mu2 & G ~mu3)"
    elif template == 8:
        goal(2)
        text = f"F{i1} (mu1 & F{i2} G{dw} mu2)"
    else:  # 9
        bx, by, br = _big_region(env, rng, cfg)
        goal(3, inside=(np.array([bx, by]), br))
        preds.append(("ball", "mu4", bx, by, br))
        text = f"F{i1} (mu1 & F{i2} mu2 & F{i3} mu3 & G{dw} mu4)"

    exclude = [goals[0]] if template == 3 else []
    init = _sample_init(env, rng, cfg, avoids, exclude=exclude)
    table = {p[1]: None for p in preds}
    task = TaskInstance(
        template=template,
        name=name or f"t{template}",
        formula_text=text,
        predicates=preds,
        init=init,
        horizon=0,
        seed=seed,
    )
    f = parse_formula(text, task.predicate_table())
    task.horizon = horizon(close_unbounded(f, 0))
    return task


def _big_region(env, rng, cfg):
    for _ in range(500):
        r = float(rng.uniform(*cfg.big_radius))
        lo = env.lo + r
        hi = env.hi - r
        if np.any(lo >= hi):
            continue
        c = rng.uniform(lo, hi)
        return float(c[0]), float(c[1]), r
    raise RuntimeError("could not sample the dwell region")


# ---------------------------------------------------------------------------
# Contexts, screening
# ---------------------------------------------------------------------------


@dataclass
class BenchOptions:
    eta: int = 4
    k: int = 1
    predictor: str = "knn"  # knn | manhattan | euclidean
    gamma: float = 1.0
    heuristic_c: float = 4.2
    knn_pairs: int = 8
    knn_max_dist: float = 0.75
    quantiles: Tuple[float, float, float] = (0.10, 0.50, 0.90)
    n_max: int = 1
    node_budget: int = 100_000
    wall_clock: float = 180.0
    ars_k: int = 5
    ars_n_iter: int = 100
    ars_n_seq: int = 3
    screen_n_iter: int = 200
    dcm: DcmConfig = field(default_factory=DcmConfig)
    replan: ReplanConfig = field(default_factory=ReplanConfig)


def build_predictor(options: BenchOptions, ds_fine: Optional[Dataset]):
    if options.predictor in ("manhattan", "euclidean"):
        return HeuristicTimePredictor(
            options.predictor, c=options.heuristic_c, gamma=options.gamma
        )
    if ds_fine is None:
        raise ValueError("knn predictor needs a dataset")
    return KnnTimePredictor(
        ds_fine,
        options.eta,
        gamma=options.gamma,
        quantiles=options.quantiles,
        n_pairs=options.knn_pairs,
        max_endpoint_dist=options.knn_max_dist,
        fallback=HeuristicTimePredictor("euclidean", options.heuristic_c, options.gamma),
    )


def make_task_context(
    task: TaskInstance,
    env: DoubleIntegratorEnv,
    options: BenchOptions,
    ds_fine: Optional[Dataset] = None,
    ds_score: Optional[Dataset] = None,
) -> TaskContext:
    formula, d = task.build()
    formula = close_unbounded(formula, task.horizon)
    return TaskContext(
        formula=formula,
        d=d,
        horizon=task.horizon,
        eta=options.eta,
        x0=np.asarray(task.init, dtype=float),
        sampler=RegionSampler(env.lo, env.hi),
        predictor=build_predictor(options, ds_fine),
        gen=env.make_generator(),
        ds_score=ds_score,
        dcm_cfg=options.dcm,
        limits=AllocationLimits(options.n_max, options.node_budget, options.wall_clock),
        ars_budget=ArsBudget(
            options.ars_k, options.ars_n_iter, options.ars_n_seq, options.wall_clock
        ),
        replan_cfg=options.replan,
    )


def screen_task(
    ctx: TaskContext, rng: np.random.Generator, n_iter: Optional[int] = None
) -> bool:
    """Accept a task iff multi-hypothesis first-solution search completes a
    feasible allocation within a fixed budget."""
    budget = ArsBudget(
        ctx.ars_budget.K,
        n_iter or ctx.ars_budget.N_iter,
        1,
        ctx.ars_budget.wall_clock,
    )
    saved = ctx.ars_budget
    ctx.ars_budget = budget
    try:
        attempt = plan_variant("ARS-FS", ctx, rng)
    finally:
        ctx.ars_budget = saved
    return attempt.plan is not None


# ---------------------------------------------------------------------------
# Stress-test construction
# ---------------------------------------------------------------------------


def _ring_layout(n: int, env: DoubleIntegratorEnv, rng, radius_range=(2.4, 3.2)):
    """Start plus n goal centers around the central obstacle, in witness
    (angle-sorted) visit order starting at the start's bearing."""
    center = env.obstacles[0][0]
    base = float(rng.uniform(0, 2 * np.pi))
    angles = base + np.sort(rng.uniform(0, 2 * np.pi, size=n))
    points = []
    for ang in angles:
        for _ in range(200):
            rad = float(rng.uniform(*radius_range))
            p = center + rad * np.array([np.cos(ang), np.sin(ang)])
            if np.all(p >= env.lo + 0.7) and np.all(p <= env.hi - 0.7):
                points.append(p)
                break
            ang += rng.uniform(-0.15, 0.15)
        else:
            return None
    start_ang = base - 0.7 * (angles[0] - base + 0.3)
    for _ in range(200):
        rad = float(rng.uniform(*radius_range))
        start = center + rad * np.array([np.cos(start_ang), np.sin(start_ang)])
        if np.all(start >= env.lo + 0.3) and np.all(start <= env.hi - 0.3):
            return start, points
        start_ang += rng.uniform(-0.2, 0.2)
    return None


def _segment_horizon(
    a: np.ndarray,
    b: np.ndarray,
    goal_radius: float,
    env: DoubleIntegratorEnv,
    exec_cfg: ExecutorConfig,
    predictor,
    speed: float = 0.35,
) -> Optional[int]:
    """Smallest horizon whose PD rollout lands inside the goal region,
    floored by the distance-matched corpus estimate."""
    gen = env.make_generator()
    path_len = float(np.linalg.norm(b - a))
    t = max(1, int(math.ceil(path_len / speed)))
    feasible = None
    for _ in range(12):
        try:
            ref = generate_segment(SegmentSpec(a, b, t, [], exec_cfg.eta), gen)
        except Exception:
            return None
        rollout = _rollout(env, ref, exec_cfg)
        if not env.collided and np.linalg.norm(rollout[-1] - b) <= max(
            goal_radius - 0.15, 0.05
        ):
            feasible = t
            break
        t += 1
    if feasible is None:
        return None
    return max(feasible, predictor.predict(a, b).l_norm)


def build_stress_task(
    n: int,
    rho: float,
    env: DoubleIntegratorEnv,
    rng: np.random.Generator,
    exec_cfg: ExecutorConfig,
    predictor,
    goal_radius: float = 0.5,
    resample_budget: int = 40,
    seed: int = 0,
) -> TaskInstance:
    """Hard-feasible shared-deadline multi-goal instance.

    The witness order is only used for construction and verification; the
    emitted formula leaves the visit order unspecified.
    """
    if n < 2 or rho < 0:
        raise ValueError("need n >= 2 and rho >= 0")
    for _ in range(resample_budget):
        layout = _ring_layout(n, env, rng)
        if layout is None:
            continue
        start, goals = layout
        legs = [start] + goals
        horizons = []
        ok = True
        for a, b in zip(legs[:-1], legs[1:]):
            h = _segment_horizon(a, b, goal_radius, env, exec_cfg, predictor)
            if h is None:
                ok = False
                break
            horizons.append(h)
        if not ok:
            continue
        t_star = int(sum(horizons))
        deadline = int(math.ceil((1.0 + rho) * t_star))
        preds = [
            ("ball", f"p{i + 1}", float(g[0]), float(g[1]), goal_radius)
            for i, g in enumerate(goals)
        ]
        text = "(" + " & ".join(f"F[0,{deadline}] p{i + 1}" for i in range(n)) + ")"
        task = TaskInstance(
            template=0,
            name=f"stress-n{n}",
            formula_text=text,
            predicates=preds,
            init=np.array(start),
            horizon=deadline,
            seed=seed,
        )
        rob = _witness_robustness(task, legs, horizons, env, exec_cfg)
        if rob is not None and rob >= 0:
            task.screened = True
            task.witness_robustness = rob
            return task
    raise RuntimeError(f"stress sampling budget exhausted (n={n}, rho={rho})")


def _witness_robustness(task, legs, horizons, env, exec_cfg) -> Optional[float]:
    """Execute the hidden witness order end to end; its robustness certifies
    feasibility by construction."""
    from .stl import eval_robustness_downsampled

    gen = env.make_generator()
    eta = exec_cfg.eta
    pieces = []
    total = 0
    try:
        for a, b, h in zip(legs[:-1], legs[1:], horizons):
            seg = generate_segment(SegmentSpec(a, b, h, [], eta), gen)
            pieces.append(seg if not pieces else seg[1:])
            total += h
        if total < task.horizon:
            hold = np.tile(pieces[-1][-1], (eta * (task.horizon - total), 1))
            pieces.append(hold)
    except Exception:
        return None
    ref = np.vstack(pieces)
    rollout = _rollout(env, ref, exec_cfg)
    if env.collided:
        return None
    f = parse_formula(task.formula_text, task.predicate_table())
    f = close_unbounded(f, task.horizon)
    try:
        return float(eval_robustness_downsampled(f, rollout, eta))
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# Task files
# ---------------------------------------------------------------------------


def save_tasks(path, tasks: Sequence[TaskInstance]) -> None:
    lines = []
    for t in tasks:
        lines.append(f"task {t.name}")
        lines.append(f"template {t.template}")
        lines.append(f"seed {t.seed}")
        lines.append(f"formula {t.formula_text}")
        for kind, name, cx, cy, r in t.predicates:
            lines.append(f"{kind} {name} {cx!r} {cy!r} {r!r}")
        lines.append("init " + " ".join(repr(float(v)) for v in t.init))
        lines.append(f"horizon {t.horizon}")
        if t.witness_robustness is not None:
            lines.append(f"witness {t.witness_robustness!r}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def load_tasks(path) -> List[TaskInstance]:
    tasks: List[TaskInstance] = []
    cur: Optional[dict] = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "task":
            if cur is not None:
                tasks.append(_task_from(cur))
            cur = {"name": rest, "predicates": [], "template": 0, "seed": 0}
        elif cur is None:
            raise ValueError(f"{path}:{lineno}: content before first 'task'")
        elif head in ("ball", "not-ball"):
            name, cx, cy, r = rest.split()
            cur["predicates"].append((head, name, float(cx), float(cy), float(r)))
        elif head in ("formula",):
            cur["formula"] = rest
        elif head == "init":
            cur["init"] = np.array([float(v) for v in rest.split()])
        elif head in ("template", "seed", "horizon"):
            cur[head] = int(rest)
        elif head == "witness":
            cur["witness"] = float(rest)
        else:
            raise ValueError(f"{path}:{lineno}: unknown line {head!r}")
    if cur is not None:
        tasks.append(_task_from(cur))
    return tasks


def _task_from(rec: dict) -> TaskInstance:
    if "formula" not in rec or "init" not in rec:
        raise ValueError(f"task {rec.get('name')!r} needs formula and init lines")
    task = TaskInstance(
        template=rec["template"],
        name=rec["name"],
        formula_text=rec["formula"],
        predicates=rec["predicates"],
        init=rec["init"],
        horizon=rec.get("horizon", 0),
        seed=rec.get("seed", 0),
        witness_robustness=rec.get("witness"),
    )
    if not task.horizon:
        f = parse_formula(task.formula_text, task.predicate_table())
        task.horizon = horizon(close_unbounded(f, 0))
    return task


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

CSV_COLUMNS = [
    "case_id",
    "template",
    "seed",
    "variant",
    "sr0",
    "planned",
    "rob_plan",
    "sr",
    "rob_exec",
    "outcome",
    "replan_events",
    "nodes",
    "plan_time",
    "exec_time",
]
TIMING_COLUMNS = ("plan_time", "exec_time")


def trimmed_mean(values: Sequence[float], frac: float = 0.05) -> float:
    """Mean after discarding floor(frac*n) samples at each end."""
    vals = sorted(float(v) for v in values)
    if not vals:
        return float("nan")
    k = int(frac * len(vals))
    kept = vals[k : len(vals) - k] if len(vals) > 2 * k else vals
    return float(np.mean(kept))


@dataclass
class MetricsRecord:
    rows: List[dict]
    aggregates: Dict[Tuple[str, str], dict]  # (group, variant) -> metrics

    @staticmethod
    def from_rows(rows: List[dict], group_key: str = "template") -> "MetricsRecord":
        groups: Dict[Tuple[str, str], List[dict]] = {}
        for row in rows:
            groups.setdefault((str(row[group_key]), row["variant"]), []).append(row)
        aggregates = {}
        for key, rs in sorted(groups.items()):
            robs = [r["rob_exec"] for r in rs if not math.isnan(r["rob_exec"])]
            aggregates[key] = {
                "cases": len(rs),
                "sr0": float(np.mean([r["sr0"] for r in rs])),
                "sr": float(np.mean([r["sr"] for r in rs])),
                "rv": trimmed_mean(robs) if robs else float("nan"),
                "pt": trimmed_mean([r["plan_time"] for r in rs]),
                "dt": trimmed_mean(
                    [r["plan_time"] + r["exec_time"] for r in rs]
                ),
            }
        return MetricsRecord(rows, aggregates)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in CSV_COLUMNS})

    def write_aggregate(self, path) -> None:
        lines = ["group variant cases sr0 sr rv pt dt"]
        for (group, variant), m in self.aggregates.items():
            lines.append(
                f"{group} {variant} {m['cases']} {m['sr0']:.4f} {m['sr']:.4f} "
                f"{m['rv']:.4f} {m['pt']:.4f} {m['dt']:.4f}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Case execution
# ---------------------------------------------------------------------------


def run_case(
    task: TaskInstance,
    env: DoubleIntegratorEnv,
    options: BenchOptions,
    variants: Sequence[str],
    case_seed: int,
    ds_fine: Optional[Dataset],
    ds_score: Optional[Dataset],
    case_id: str = "",
) -> List[dict]:
    """Plan and execute one task under each requested variant.

    Planning is shared between a variant and its +OR form (the nominal plan
    is identical; replanning only changes execution)."""
    rows = []
    planners = sorted({PLANNER_OF_VARIANT[v] for v in variants})
    attempts: Dict[str, PlanAttempt] = {}
    ss = np.random.SeedSequence(case_seed)
    plan_seeds = {p: s for p, s in zip(planners, ss.spawn(len(planners)))}
    exec_ss = ss.spawn(len(variants))
    ctx = make_task_context(task, env, options, ds_fine, ds_score)
    for planner in planners:
        attempts[planner] = plan_variant(
            planner, ctx, np.random.default_rng(plan_seeds[planner])
        )
    for variant, ess in zip(variants, exec_ss):
        planner, replanning = VARIANTS[variant]
        attempt = attempts[planner]
        row = {
            "case_id": case_id or task.name,
            "template": task.template,
            "seed": task.seed,
            "variant": variant,
            "sr0": int(attempt.allocated),
            "planned": int(attempt.plan is not None),
            "rob_plan": round(attempt.robustness, 9),
            "sr": 0,
            "rob_exec": float("nan"),
            "outcome": "no-plan",
            "replan_events": 0,
            "nodes": attempt.nodes,
            "plan_time": round(attempt.seconds, 6),
            "exec_time": 0.0,
        }
        if attempt.plan is not None:
            hooks = None
            if replanning:
                hooks = ReplanHooks(
                    cfg=options.replan,
                    d=ctx.d,
                    sampler=ctx.sampler,
                    predictor=ctx.predictor,
                    gen=ctx.gen,
                    limits=ctx.limits,
                    budget=ctx.ars_budget,
                    rng=np.random.default_rng(ess),
                )
            exec_cfg = ExecutorConfig(k=options.k, eta=options.eta)
            t0 = _time.monotonic()
            outcome = execute_plan(attempt.plan, ctx.formula, env, exec_cfg, hooks)
            row["exec_time"] = round(_time.monotonic() - t0, 6)
            row["sr"] = int(outcome.robustness >= 0)
            row["rob_exec"] = round(outcome.robustness, 9)
            row["outcome"] = outcome.outcome
            row["replan_events"] = len(outcome.events)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def parse_config(path) -> dict:
    """key = value per line; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def options_from_config(cfg: dict) -> BenchOptions:
    options = BenchOptions()
    casts = {
        "eta": int,
        "k": int,
        "predictor": str,
        "gamma": float,
        "heuristic_c": float,
        "knn_pairs": int,
        "knn_max_dist": float,
        "n_max": int,
        "node_budget": int,
        "wall_clock": float,
        "ars_k": int,
        "ars_n_iter": int,
        "ars_n_seq": int,
        "screen_n_iter": int,
    }
    for key, cast in casts.items():
        if key in cfg:
            setattr(options, key, cast(cfg[key]))
    return options


def _ensure_dataset(cfg: dict, options: BenchOptions, env, out_dir: Path, seed: int):
    path = cfg.get("dataset", "")
    if not path:
        path = out_dir / "dataset.txt"
        if not Path(path).exists():
            generate_offline_data(
                env,
                int(cfg.get("data_trajectories", 400)),
                seed,
                path,
                eta=options.eta,
                k=options.k,
            )
    ds_fine = load_dataset(path)
    return ds_fine, downsample_dataset(ds_fine, options.eta)


def run_benchmark(cfg: dict, out_dir) -> MetricsRecord:
    """Template suite: sample + screen tasks, run every variant, write the
    per-case CSV, aggregate table, and plan traces directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 1))
    options = options_from_config(cfg)
    env = DoubleIntegratorEnv()
    templates = [int(t) for t in cfg.get("templates", "1,2,3").split(",")]
    cases = int(cfg.get("cases_per_template", 5))
    variants = [v.strip() for v in cfg.get("variants", "B,ARS-FS,ARS").split(",")]
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    do_screen = cfg.get("screen", "1") != "0"
    ds_fine, ds_score = _ensure_dataset(cfg, options, env, out_dir, seed)

    rows: List[dict] = []
    for template in templates:
        for j in range(cases):
            case_ss = np.random.SeedSequence((seed, template, j))
            task_rng = np.random.default_rng(case_ss)
            task = None
            for attempt in range(50):
                cand = instantiate_template(
                    template,
                    env,
                    task_rng,
                    seed=j,
                    name=f"t{template}-c{j}",
                )
                if not do_screen:
                    task = cand
                    break
                ctx = make_task_context(cand, env, options, ds_fine, ds_score)
                if screen_task(
                    ctx,
                    np.random.default_rng((seed, template, j, attempt)),
                    options.screen_n_iter,
                ):
                    cand.screened = True
                    task = cand
                    break
            if task is None:
                continue
            rows.extend(
                run_case(
                    task,
                    env,
                    options,
                    variants,
                    case_seed=int(case_ss.generate_state(1)[0]),
                    ds_fine=ds_fine,
                    ds_score=ds_score,
                    case_id=task.name,
                )
            )
    record = MetricsRecord.from_rows(rows, group_key="template")
    record.write_csv(out_dir / "cases.csv")
    record.write_aggregate(out_dir / "aggregate.txt")
    return record


def run_stress_grid(cfg: dict, out_dir) -> MetricsRecord:
    """Stress grid over (n, rho): accepted-by-construction tasks, compared
    across variants; emits per-case CSV plus success-vs-n plot data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 1))
    options = options_from_config(cfg)
    env = DoubleIntegratorEnv()
    ns = [int(v) for v in cfg.get("goals", "3,4,5").split(",")]
    rhos = [float(v) for v in cfg.get("slacks", "0,0.1,0.2").split(",")]
    cases = int(cfg.get("cases_per_cell", 20))
    variants = [v.strip() for v in cfg.get("variants", "B,ARS-FS").split(",")]
    ds_fine, ds_score = _ensure_dataset(cfg, options, env, out_dir, seed)
    predictor = build_predictor(options, ds_fine)
    exec_cfg = ExecutorConfig(k=options.k, eta=options.eta)

    rows: List[dict] = []
    for n in ns:
        for rho in rhos:
            for j in range(cases):
                rng = np.random.default_rng((seed, n, int(rho * 100), j))
                task = build_stress_task(
                    n, rho, env, rng, exec_cfg, predictor, seed=j
                )
                task.name = f"n{n}-r{rho}-c{j}"
                case_rows = run_case(
                    task,
                    env,
                    options,
                    variants,
                    case_seed=int(
                        np.random.SeedSequence((seed, n, int(rho * 100), j, 7)).generate_state(1)[0]
                    ),
                    ds_fine=ds_fine,
                    ds_score=ds_score,
                    case_id=task.name,
                )
                for row in case_rows:
                    row["template"] = f"n{n}-rho{rho}"
                rows.extend(case_rows)
    record = MetricsRecord.from_rows(rows, group_key="template")
    record.write_csv(out_dir / "stress_cases.csv")
    record.write_aggregate(out_dir / "stress_aggregate.txt")
    _write_plot_data(record, ns, rhos, variants, out_dir)
    return record


def _write_plot_data(record, ns, rhos, variants, out_dir: Path):
    """x,y pairs per (variant, rho): allocation success rate against n."""
    for variant in variants:
        for rho in rhos:
            lines = []
            for n in ns:
                key = (f"n{n}-rho{rho}", variant)
                if key in record.aggregates:
                    lines.append(f"{n} {record.aggregates[key]['sr0']:.4f}")
            name = f"plot_sr0_{variant.replace('+', 'p')}_rho{rho}.txt"
            (out_dir / name).write_text("\n".join(lines) + "\n")
