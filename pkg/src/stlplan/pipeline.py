"""Planner variants wired end to end over one task context.

Variants: B (basic allocation, first feasible), ARS-FS (multi-hypothesis
search stopped at the first solution), ARS (score-guided anytime
refinement), and the +OR forms that enable online replanning at execution
time.  Every returned plan is checked for non-negative planning-level
robustness; a negative value is a pipeline bug, not a planning failure.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .allocate import AllocationLimits, RegionSampler, allocate
from .consistency import DcmConfig
from .dataset import Dataset
from .decompose import Decomposition
from .generate import (
    Generator,
    PlanTrajectory,
    SegmentFailure,
    complete_trajectory,
    verify_plan,
)
from .refine import ArsBudget, ars_search
from .replan import ReplanConfig
from .stl import Formula

__all__ = [
    "TaskContext",
    "PlanAttempt",
    "PlanSoundnessError",
    "plan_basic",
    "plan_ars",
    "plan_variant",
    "PLANNER_OF_VARIANT",
    "VARIANTS",
]

# variant name -> (planner, online replanning enabled)
VARIANTS: Dict[str, Tuple[str, bool]] = {
    "B": ("B", False),
    "B+OR": ("B", True),
    "ARS-FS": ("ARS-FS", False),
    "ARS": ("ARS", False),
    "ARS+OR": ("ARS", True),
}
PLANNER_OF_VARIANT = {name: planner for name, (planner, _) in VARIANTS.items()}


class PlanSoundnessError(AssertionError):
    """A returned plan had negative planning-level robustness."""


@dataclass
class TaskContext:
    formula: Formula  # closed (no bare G), disjunction-free branch
    d: Decomposition  # preprocessed
    horizon: int
    eta: int
    x0: np.ndarray
    sampler: RegionSampler
    predictor: object
    gen: Generator
    ds_score: Optional[Dataset] = None  # planning-resolution dataset for DCM
    dcm_cfg: DcmConfig = field(default_factory=DcmConfig)
    limits: AllocationLimits = field(default_factory=AllocationLimits)
    ars_budget: ArsBudget = field(default_factory=ArsBudget)
    replan_cfg: ReplanConfig = field(default_factory=ReplanConfig)


@dataclass
class PlanAttempt:
    allocated: bool
    plan: Optional[PlanTrajectory]
    robustness: float  # planning-level; nan when no plan
    seconds: float
    nodes: int
    completions: int = 0
    score: Optional[float] = None


def _finish(ctx: TaskContext, plan: Optional[PlanTrajectory], allocated, t0, nodes, completions=0, score=None):
    rob = float("nan")
    if plan is not None:
        rob = verify_plan(plan, ctx.formula)
        if rob < 0:
            raise PlanSoundnessError(
                f"plan robustness {rob} is negative; soundness is violated"
            )
    return PlanAttempt(
        allocated, plan, rob, _time.monotonic() - t0, nodes, completions, score
    )


def plan_basic(ctx: TaskContext, rng: np.random.Generator) -> PlanAttempt:
    t0 = _time.monotonic()
    alloc = allocate(ctx.x0, ctx.d, ctx.sampler, ctx.predictor, ctx.limits, rng)
    if alloc is None:
        return _finish(ctx, None, False, t0, 0)
    plan = None
    try:
        plan = complete_trajectory(
            alloc, ctx.d, ctx.gen, ctx.eta, ctx.horizon, rng
        )
    except SegmentFailure:
        pass
    return _finish(ctx, plan, True, t0, alloc.stats.nodes_visited)


def plan_ars(
    ctx: TaskContext, rng: np.random.Generator, first_solution: bool = False
) -> PlanAttempt:
    t0 = _time.monotonic()
    result = ars_search(
        ctx.x0,
        ctx.d,
        ctx.sampler,
        ctx.predictor,
        ctx.gen,
        ctx.ds_score,
        ctx.dcm_cfg,
        ctx.ars_budget,
        mode="first_solution" if first_solution else "full",
        eta=ctx.eta,
        horizon=ctx.horizon,
        n_max=ctx.limits.n_max,
        rng=rng,
    )
    score = result.report.score if result.report is not None else None
    return _finish(
        ctx,
        result.plan,
        result.plan is not None,
        t0,
        result.stats.nodes,
        result.stats.completions,
        score,
    )


def plan_variant(planner: str, ctx: TaskContext, rng: np.random.Generator) -> PlanAttempt:
    if planner == "B":
        return plan_basic(ctx, rng)
    if planner == "ARS-FS":
        return plan_ars(ctx, rng, first_solution=True)
    if planner == "ARS":
        return plan_ars(ctx, rng, first_solution=False)
    raise ValueError(f"unknown planner {planner!r}")
