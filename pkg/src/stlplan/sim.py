"""Execution environments, PD tracking, time-synchronous executor, data gen.

The planner reasons over workspace positions; the simulator owns the full
double-integrator state [x, y, vx, vy].  One planning step spans eta fine
reference states, and each fine step runs exactly k control updates of
duration dt = 1/(k*eta) planning-step units, so robustness intervals stay
aligned with formula integers.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .generate import GeometricGenerator, Generator, PlanTrajectory, SegmentSpec, generate_segment
from .dataset import Trajectory, save_dataset
from .replan import (
    GLOBAL,
    LOCAL,
    NOMINAL,
    ExecutionContext,
    ReplanConfig,
    ReplanEvent,
    classify,
    fallback,
    global_replan,
    local_repair,
)
from .stl import Formula, eval_robustness_downsampled

__all__ = [
    "DoubleIntegratorEnv",
    "GridMazeEnv",
    "ExecutorConfig",
    "ReplanHooks",
    "ExecutionOutcome",
    "pd_control",
    "execute_plan",
    "generate_offline_data",
    "load_env_config",
]


@dataclass
class DoubleIntegratorEnv:
    lo: np.ndarray = field(default_factory=lambda: np.zeros(2))
    hi: np.ndarray = field(default_factory=lambda: np.full(2, 10.0))
    obstacles: List[Tuple[np.ndarray, float]] = field(
        default_factory=lambda: [(np.array([4.0, 6.0]), 1.5)]
    )
    control_bound: float = 0.5
    dt: float = 0.25
    collided: bool = False

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.obstacles = [
            (np.asarray(c, dtype=float), float(r)) for c, r in self.obstacles
        ]

    def reset_flags(self):
        self.collided = False

    def clearance(self, position) -> float:
        p = np.asarray(position, dtype=float)[:2]
        if not self.obstacles:
            return float("inf")
        return min(float(np.linalg.norm(p - c) - r) for c, r in self.obstacles)

    def step(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Explicit Euler: position advances on the old velocity, then the
        clipped control updates the velocity; positions clip to the
        workspace and the collision flag latches on obstacle entry."""
        u = np.clip(np.asarray(u, dtype=float), -self.control_bound, self.control_bound)
        p, v = state[:2], state[2:]
        p_new = np.clip(p + v * self.dt, self.lo, self.hi)
        v_new = v + u * self.dt
        if self.clearance(p_new) < 0:
            self.collided = True
        return np.concatenate([p_new, v_new])

    def free_position(self, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
        for _ in range(1000):
            p = rng.uniform(self.lo + margin, self.hi - margin)
            if self.clearance(p) >= margin:
                return p
        raise RuntimeError("could not sample a free position")

    def make_generator(self, clearance: float = 0.1) -> GeometricGenerator:
        return GeometricGenerator(self.obstacles, self.lo, self.hi, clearance)


@dataclass
class GridMazeEnv(DoubleIntegratorEnv):
    """Point-mass maze: wall cells from a text layout, same interfaces.

    Layout rows use '#' for walls and '.' for free cells; the workspace is
    rows x cols cells of ``cell`` units each, row 0 at the bottom.
    """

    layout: Sequence[str] = ("....", "....")
    cell: float = 1.0

    def __post_init__(self):
        rows = len(self.layout)
        cols = len(self.layout[0])
        if any(len(r) != cols for r in self.layout):
            raise ValueError("maze rows must share one width")
        self.lo = np.zeros(2)
        self.hi = np.array([cols * self.cell, rows * self.cell])
        self.obstacles = []
        super().__post_init__()

    def wall_at(self, position) -> bool:
        p = np.asarray(position, dtype=float)[:2]
        col = int(np.clip(p[0] // self.cell, 0, len(self.layout[0]) - 1))
        row = int(np.clip(p[1] // self.cell, 0, len(self.layout) - 1))
        return self.layout[row][col] == "#"

    def clearance(self, position) -> float:
        # cell-based: inside a wall counts as negative clearance
        return -1.0 if self.wall_at(position) else 1.0

    def make_generator(self, clearance: float = 0.1) -> "MazeGenerator":
        return MazeGenerator(self)


class MazeGenerator(Generator):
    """BFS over free cells, polyline through cell centers, constant-speed
    resampling; straight line when both endpoints see each other."""

    def __init__(self, env: GridMazeEnv):
        self.env = env

    def generate(self, spec: SegmentSpec, rng) -> np.ndarray:
        from .generate import SegmentFailure, _resample_polyline

        env = self.env
        if self._line_free(spec.start, spec.goal):
            return _resample_polyline(np.vstack([spec.start, spec.goal]), spec.fine_count)
        cell = env.cell
        cols = len(env.layout[0])
        rows = len(env.layout)

        def cell_of(p):
            return (
                int(np.clip(p[1] // cell, 0, rows - 1)),
                int(np.clip(p[0] // cell, 0, cols - 1)),
            )

        start_c, goal_c = cell_of(spec.start), cell_of(spec.goal)
        prev = {start_c: None}
        queue = [start_c]
        while queue:
            cur = queue.pop(0)
            if cur == goal_c:
                break
            r0, c0 = cur
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nxt = (r0 + dr, c0 + dc)
                if not (0 <= nxt[0] < rows and 0 <= nxt[1] < cols):
                    continue
                if env.layout[nxt[0]][nxt[1]] == "#" or nxt in prev:
                    continue
                prev[nxt] = cur
                queue.append(nxt)
        if goal_c not in prev:
            raise SegmentFailure("maze has no free path between waypoints")
        cells = [goal_c]
        while prev[cells[-1]] is not None:
            cells.append(prev[cells[-1]])
        centers = [
            np.array([(c + 0.5) * cell, (r + 0.5) * cell]) for r, c in reversed(cells)
        ]
        path = np.vstack([spec.start, *centers[1:-1], spec.goal])
        return _resample_polyline(path, spec.fine_count)

    def _line_free(self, p, q, samples: int = 64) -> bool:
        for w in np.linspace(0.0, 1.0, samples):
            if self.env.wall_at(p + w * (q - p)):
                return False
        return True


# ---------------------------------------------------------------------------
# Controller and executor
# ---------------------------------------------------------------------------


@dataclass
class ExecutorConfig:
    k: int = 1  # control updates per fine step
    eta: int = 4  # fine states per planning step
    kp: float = 1.2
    kd: float = 1.8
    disturbance: Optional[Tuple[int, Sequence[float]]] = None  # (step, offset)

    def __post_init__(self):
        if self.k < 1 or self.eta < 1:
            raise ValueError("k and eta must be >= 1")

    @property
    def dt(self) -> float:
        return 1.0 / (self.k * self.eta)


def pd_control(state, p_ref, v_ref, kp: float, kd: float, bound: float) -> np.ndarray:
    u = kp * (np.asarray(p_ref) - state[:2]) + kd * (np.asarray(v_ref) - state[2:])
    return np.clip(u, -bound, bound)


@dataclass
class ReplanHooks:
    cfg: ReplanConfig
    d: object  # Decomposition
    sampler: object
    predictor: object
    gen: Generator
    limits: object = None  # AllocationLimits for the basic replanner
    budget: object = None  # ArsBudget for the ARS-FS replanner
    rng: object = None


@dataclass
class ExecutionOutcome:
    trajectory: np.ndarray  # executed fine positions
    robustness: float
    outcome: str  # success | replan-recovered | fallback-abort | collision | violation
    events: List[ReplanEvent] = field(default_factory=list)
    tracking_errors: List[float] = field(default_factory=list)


def execute_plan(
    plan: PlanTrajectory,
    formula: Formula,
    env: DoubleIntegratorEnv,
    exec_cfg: ExecutorConfig,
    replan: Optional[ReplanHooks] = None,
) -> ExecutionOutcome:
    """Track the fine reference time-synchronously and, when enabled, run
    the replanning hierarchy at planning-step boundaries."""
    eta, k = exec_cfg.eta, exec_cfg.k
    if eta != plan.eta:
        raise ValueError("executor eta must match the plan's resolution")
    env.dt = exec_cfg.dt
    env.reset_flags()
    ref = plan.fine_states
    state = np.concatenate([ref[0][:2], np.zeros(2)])
    executed = [state[:2].copy()]
    events: List[ReplanEvent] = []
    errors: List[float] = []
    ctx = ExecutionContext(plan, replan.d if replan else None, state[:2].copy(), 0, events)
    aborted = False
    persist_until = -1
    dt_fine = 1.0 / eta

    i = 0
    while i < len(ref) - 1:
        t_plan, offset = divmod(i, eta)
        if offset == 0:
            if (
                exec_cfg.disturbance is not None
                and t_plan == exec_cfg.disturbance[0]
                and t_plan > 0
            ):
                state[:2] = np.clip(
                    state[:2] + np.asarray(exec_cfg.disturbance[1], dtype=float),
                    env.lo,
                    env.hi,
                )
            e_t = float(np.linalg.norm(state[:2] - ref[i][:2]))
            errors.append(e_t)
            if replan is not None and t_plan > 0 and t_plan >= persist_until:
                regime = classify(e_t, replan.cfg)
                if regime != NOMINAL:
                    ctx.plan, ctx.x, ctx.t = plan, state[:2].copy(), t_plan
                    t0 = _time.monotonic()
                    new_plan, outcome = _attempt_replan(ctx, regime, replan)
                    wall = _time.monotonic() - t0
                    events.append(ReplanEvent(t_plan, e_t, regime, outcome, wall))
                    if outcome == "abort":
                        aborted = True
                        break
                    if outcome == "persist":
                        persist_until = t_plan + replan.cfg.persist_horizon
                    elif new_plan is not None:
                        plan = new_plan
                        ctx.plan = plan
                        ref = plan.fine_states
        p_ref = ref[i + 1][:2]
        v_ref = (ref[i + 1][:2] - ref[i][:2]) / dt_fine
        for _ in range(k):
            u = pd_control(state, p_ref, v_ref, exec_cfg.kp, exec_cfg.kd, env.control_bound)
            state = env.step(state, u)
        executed.append(state[:2].copy())
        i += 1

    traj = np.asarray(executed)
    try:
        rob = eval_robustness_downsampled(formula, traj, eta)
    except ValueError:
        rob = float("-inf")  # aborted before the horizon
    if aborted:
        outcome = "fallback-abort"
    elif env.collided:
        outcome = "collision"
    elif rob < 0:
        outcome = "violation"
    elif events:
        outcome = "replan-recovered"
    else:
        outcome = "success"
    return ExecutionOutcome(traj, rob, outcome, events, errors)


def _attempt_replan(ctx: ExecutionContext, regime: str, hooks: ReplanHooks):
    """Local repair first when the regime allows it, then global
    re-allocation, then the fallback decision."""
    if regime == LOCAL:
        repaired = local_repair(ctx, hooks.predictor, hooks.gen, hooks.rng)
        if repaired is not None:
            return repaired, "local-repair"
    new_plan = global_replan(
        ctx,
        hooks.d,
        hooks.sampler,
        hooks.predictor,
        hooks.gen,
        hooks.cfg,
        hooks.limits,
        hooks.budget,
        hooks.rng,
    )
    if new_plan is not None:
        return new_plan, "global-replan"
    return None, fallback(ctx, hooks.cfg)


# ---------------------------------------------------------------------------
# Offline data generation
# ---------------------------------------------------------------------------


def generate_offline_data(
    env: DoubleIntegratorEnv,
    n_traj: int,
    seed: int,
    path,
    eta: int = 4,
    k: int = 1,
    speed: float = 0.25,
) -> int:
    """Sample reach-avoid pairs, plan geometrically, roll out under PD
    tracking, and keep collision-free rollouts as the offline corpus.

    Deterministic for a fixed seed; returns the number of stored
    trajectories (= n_traj unless sampling kept colliding).
    """
    rng = np.random.default_rng(seed)
    gen = env.make_generator()
    cfg = ExecutorConfig(k=k, eta=eta)
    trajectories: List[Trajectory] = []
    attempts = 0
    while len(trajectories) < n_traj and attempts < 20 * n_traj:
        attempts += 1
        start = env.free_position(rng, margin=0.15)
        goal = env.free_position(rng, margin=0.15)
        dist = float(np.linalg.norm(goal - start))
        length = max(1, int(np.ceil(dist / speed)))
        try:
            ref = generate_segment(SegmentSpec(start, goal, length, [], eta), gen, rng)
        except Exception:
            continue
        rollout = _rollout(env, ref, cfg)
        if env.collided:
            continue
        trajectories.append(Trajectory(rollout, meta=str(len(trajectories))))
    if not trajectories:
        raise RuntimeError("no collision-free rollouts produced")
    save_dataset(path, trajectories)
    return len(trajectories)


def _rollout(env: DoubleIntegratorEnv, ref: np.ndarray, cfg: ExecutorConfig) -> np.ndarray:
    env.dt = cfg.dt
    env.reset_flags()
    state = np.concatenate([ref[0][:2], np.zeros(2)])
    out = [state[:2].copy()]
    dt_fine = 1.0 / cfg.eta
    for i in range(len(ref) - 1):
        p_ref = ref[i + 1][:2]
        v_ref = (ref[i + 1][:2] - ref[i][:2]) / dt_fine
        for _ in range(cfg.k):
            u = pd_control(state, p_ref, v_ref, cfg.kp, cfg.kd, env.control_bound)
            state = env.step(state, u)
        out.append(state[:2].copy())
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Environment config files
# ---------------------------------------------------------------------------


def load_env_config(path) -> Tuple[DoubleIntegratorEnv, ExecutorConfig]:
    """Key=value environment file.

    Recognized keys: ``workspace = x0 y0 x1 y1``, repeatable
    ``obstacle = cx cy r``, ``maze = ####/#..#/####``, ``cell``, ``kp``,
    ``kd``, ``k``, ``eta``, ``control_bound``, ``disturb = t dx dy``.
    """
    values: dict = {}
    obstacles = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip() if not raw.strip().startswith("maze") else raw.strip()
        if not line or "=" not in line:
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "obstacle":
            c = [float(v) for v in val.split()]
            obstacles.append((np.array(c[:2]), c[2]))
        else:
            values[key] = val
    kwargs = {}
    if "workspace" in values:
        w = [float(v) for v in values["workspace"].split()]
        kwargs["lo"], kwargs["hi"] = np.array(w[:2]), np.array(w[2:4])
    if "control_bound" in values:
        kwargs["control_bound"] = float(values["control_bound"])
    if "maze" in values:
        env: DoubleIntegratorEnv = GridMazeEnv(
            layout=tuple(values["maze"].split("/")),
            cell=float(values.get("cell", 1.0)),
            **{k: v for k, v in kwargs.items() if k == "control_bound"},
        )
    else:
        if obstacles:
            kwargs["obstacles"] = obstacles
        env = DoubleIntegratorEnv(**kwargs)
    exec_cfg = ExecutorConfig(
        k=int(values.get("k", 1)),
        eta=int(values.get("eta", 4)),
        kp=float(values.get("kp", 1.2)),
        kd=float(values.get("kd", 1.8)),
    )
    if "disturb" in values:
        parts = [float(v) for v in values["disturb"].replace(",", " ").split()]
        exec_cfg.disturbance = (int(parts[0]), parts[1:])
    return env, exec_cfg
