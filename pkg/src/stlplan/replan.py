"""Hierarchical online replanning: local segment repair, history-consistent
global re-allocation, and the fallback protocol.

The tracking error at a planning-step boundary selects a regime.  Moderate
deviations are repaired by regenerating only the current segment back onto
the next scheduled waypoint, keeping the downstream schedule untouched.
Critical deviations (or failed repairs) rebuild the allocator state by
replaying the executed prefix commits at their *scheduled* times, inject the
current state as the suffix start, and re-run allocation for the remaining
conditions.  When even that fails, the executor either persists on the
nominal suffix and retries, or aborts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .allocate import (
    AllocationLimits,
    RegionSampler,
    allocate,
    update_constraint,
)
from .decompose import Decomposition
from .generate import (
    Generator,
    PlanTrajectory,
    SegmentFailure,
    SegmentSpec,
    complete_trajectory,
    generate_segment,
)
from .refine import ArsBudget, ars_search
from .timebase import store_from

__all__ = [
    "ReplanConfig",
    "ReplanEvent",
    "ExecutionContext",
    "ReplanError",
    "classify",
    "local_repair",
    "global_replan",
    "fallback",
]

NOMINAL = "nominal"
LOCAL = "local"
GLOBAL = "global"


class ReplanError(RuntimeError):
    """Replay reconstruction mismatch: the executed prefix could not be
    rebuilt, which signals a bug rather than an unlucky disturbance."""


@dataclass
class ReplanConfig:
    eps_loc: float = 0.2
    eps_glob: float = 0.6
    fallback: str = "persistence"  # or "abort"
    persist_horizon: int = 5
    retries: int = 1
    replanner: str = "ars_first_solution"  # or "basic"

    def __post_init__(self):
        if not 0 <= self.eps_loc < self.eps_glob:
            raise ValueError("need 0 <= eps_loc < eps_glob")
        if self.fallback not in ("persistence", "abort"):
            raise ValueError(f"unknown fallback {self.fallback!r}")
        if self.replanner not in ("basic", "ars_first_solution"):
            raise ValueError(f"unknown replanner {self.replanner!r}")
        if self.retries < 0 or self.persist_horizon < 1:
            raise ValueError("retries >= 0 and persist_horizon >= 1 required")


@dataclass
class ReplanEvent:
    t: int
    error: float
    regime: str
    outcome: str
    wall_time: float = 0.0


@dataclass
class ExecutionContext:
    plan: PlanTrajectory
    d: Decomposition
    x: np.ndarray
    t: int
    events: List[ReplanEvent] = field(default_factory=list)
    persists_done: int = 0


def classify(e_t: float, cfg: ReplanConfig) -> str:
    """Regime of a non-negative time-aligned tracking error."""
    if e_t < 0:
        raise ValueError("tracking error must be non-negative")
    if e_t <= cfg.eps_loc:
        return NOMINAL
    if e_t <= cfg.eps_glob:
        return LOCAL
    return GLOBAL


# ---------------------------------------------------------------------------
# Local repair
# ---------------------------------------------------------------------------


def local_repair(
    ctx: ExecutionContext,
    predictor,
    gen: Generator,
    rng: Optional[np.random.Generator] = None,
) -> Optional[PlanTrajectory]:
    """Regenerate only the segment from the current state to the next
    scheduled waypoint; None when the deadline is unrecoverable or the
    segment cannot be generated."""
    plan = ctx.plan
    next_times = [t for t in plan.waypoint_times() if t > ctx.t]
    if not next_times:
        return None
    t_k = next_times[0]
    target = plan.fine_states[plan.fine_index(t_k)]
    t_hat = predictor.predict(ctx.x, target).l_norm
    if ctx.t + t_hat > t_k:
        return None
    active = []
    for inv, a, b in plan.invariance_windows:
        s, e = max(a, ctx.t), min(b, t_k)
        if s <= e:
            active.append((inv.pred, (s - ctx.t, e - ctx.t)))
    spec = SegmentSpec(ctx.x, target, t_k - ctx.t, active, plan.eta)
    try:
        seg = generate_segment(spec, gen, rng)
    except SegmentFailure:
        return None
    fine = np.vstack(
        [
            plan.fine_states[: plan.fine_index(ctx.t)],
            seg,
            plan.fine_states[plan.fine_index(t_k) + 1 :],
        ]
    )
    return PlanTrajectory(
        fine,
        list(plan.skeleton),
        list(plan.lambda_star),
        plan.eta,
        plan.t_end,
        list(plan.invariance_windows),
        plan.t_start,
    )


# ---------------------------------------------------------------------------
# History-consistent global replanning
# ---------------------------------------------------------------------------


def replay_prefix(ctx: ExecutionContext, d: Decomposition):
    """Rebuild the allocator state induced by the executed prefix.

    Commits are re-applied in their original order at their scheduled times;
    any infeasibility here means the prefix is not reproducible, which is an
    internal error, never a silent continue.
    """
    by_id = {c.id: c for c in d.reach + d.invar}
    store = store_from(d)
    determined: Tuple = ()
    prefix_ids = []
    last_time = 0
    for wp in ctx.plan.skeleton:
        if wp.condition_id is None or wp.time > ctx.t:
            continue
        if wp.time < last_time:
            raise ReplanError("prefix commit times are not non-decreasing")
        last_time = wp.time
        r = by_id[wp.condition_id]
        if not update_constraint(store, r, wp.state, wp.time, determined):
            raise ReplanError(
                f"replayed prefix became infeasible at condition {r.id}"
            )
        residual_id = d.trigger_residual.get(r.id)
        if residual_id is not None:
            determined = determined + ((by_id[residual_id], wp.time + 1),)
        prefix_ids.append(r.id)
    return store, determined, prefix_ids


def global_replan(
    ctx: ExecutionContext,
    d: Decomposition,
    sampler: RegionSampler,
    predictor,
    gen: Generator,
    cfg: ReplanConfig,
    limits: Optional[AllocationLimits] = None,
    budget: Optional[ArsBudget] = None,
    rng: Optional[np.random.Generator] = None,
) -> Optional[PlanTrajectory]:
    """Re-allocate the unfinished suffix from the current state.

    Returns the recomposed full plan (executed-prefix reference unchanged,
    new suffix), or None when no feasible suffix exists, which hands control
    to the fallback protocol.
    """
    plan = ctx.plan
    store, determined, prefix_ids = replay_prefix(ctx, d)

    # the current state enters the timeline at time t: invariances already
    # active but violated by it must end before now, or no assignment is
    # consistent with the history
    for inv, start in determined:
        if start <= ctx.t and inv.pred.eval(ctx.x) < 0:
            if not store.add_constraint(inv.hi, "<", ctx.t):
                return None
    remaining = [r.id for r in d.reach if r.id not in set(prefix_ids)]
    determined_ids = tuple((inv.id, s) for inv, s in determined)
    horizon = plan.t_end

    suffix: Optional[PlanTrajectory] = None
    if cfg.replanner == "basic":
        alloc = allocate(
            ctx.x,
            d,
            sampler,
            predictor,
            limits,
            rng,
            start_time=ctx.t,
            store=store,
            remaining_ids=remaining,
            determined=determined_ids,
        )
        if alloc is not None:
            try:
                suffix = complete_trajectory(
                    alloc, d, gen, plan.eta, horizon, rng, start_time=ctx.t
                )
            except SegmentFailure:
                suffix = None
    else:
        result = ars_search(
            ctx.x,
            d,
            sampler,
            predictor,
            gen,
            None,
            None,
            budget,
            mode="first_solution",
            eta=plan.eta,
            horizon=horizon,
            rng=rng,
            start_time=ctx.t,
            store=store,
            remaining_ids=remaining,
            determined=determined_ids,
        )
        suffix = result.plan
    if suffix is None:
        return None

    prefix_fine = plan.fine_states[: plan.fine_index(ctx.t)]
    fine = np.vstack([prefix_fine, suffix.fine_states])
    skeleton = [
        wp
        for wp in plan.skeleton
        if wp.condition_id is None or wp.time <= ctx.t
    ] + [wp for wp in suffix.skeleton]
    new_plan = PlanTrajectory(
        fine,
        skeleton,
        list(suffix.lambda_star),
        plan.eta,
        suffix.t_end,
        list(suffix.invariance_windows),
        plan.t_start,
    )
    # scheduled-time anchoring: the executed prefix reference is untouched
    assert np.array_equal(
        new_plan.fine_states[: plan.fine_index(ctx.t)],
        plan.fine_states[: plan.fine_index(ctx.t)],
    )
    return new_plan


def fallback(ctx: ExecutionContext, cfg: ReplanConfig) -> str:
    """Action after a failed global replan: track the nominal suffix for a
    short horizon and retry (persistence, up to retries), or abort."""
    if cfg.fallback == "abort":
        return "abort"
    if ctx.persists_done > cfg.retries:
        return "abort"
    ctx.persists_done += 1
    return "persist"
