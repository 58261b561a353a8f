"""Anytime refinement search over multi-hypothesis allocations.

Where the basic allocator keeps one locally admissible successor per reach
condition, this search keeps up to K state-time hypotheses per condition
(different sampled states, different predicted durations), scores every
completed plan with the dynamic consistency metric, and prunes the stack
back to the decision responsible for the riskiest segment so refinement
resumes from that ancestor's alternatives.  With a candidate capacity of one
and first-solution termination it degenerates to the basic planner: the
hypothesis set collapses to the typical duration and the commit trace is
identical under a shared seed.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .allocate import (
    AllocationResult,
    AllocationError,
    AllocationStats,
    RegionSampler,
    TimedWaypoint,
    conflict_intervals,
    earliest_free_time,
    order_conditions,
    update_constraint,
    validate_allocation,
)
from .consistency import ConsistencyReport, DcmConfig, cvar, score
from .dataset import Dataset
from .decompose import Decomposition, ProgressCondition
from .generate import (
    Generator,
    PlanTrajectory,
    SegmentFailure,
    complete_trajectory,
)
from .predict import hypothesis_set
from .timebase import store_from

__all__ = [
    "ArsBudget",
    "ArsStats",
    "ArsResult",
    "multi_hypothesis_assign",
    "segment_risks",
    "ars_search",
]


@dataclass
class ArsBudget:
    K: int = 5
    N_iter: int = 100
    N_seq: int = 3
    wall_clock: float = 0.0  # seconds, 0 = unlimited

    def __post_init__(self):
        if min(self.K, self.N_iter, self.N_seq) < 1 or self.wall_clock < 0:
            raise ValueError("budgets must be >= 1 (wall_clock >= 0)")


@dataclass
class ArsStats:
    nodes: int = 0
    completions: int = 0
    backjumps: int = 0
    wall_time: float = 0.0
    commits: List[Tuple[int, int]] = field(default_factory=list)


@dataclass
class ArsResult:
    plan: Optional[PlanTrajectory]
    report: Optional[ConsistencyReport]
    stats: ArsStats


def multi_hypothesis_assign(
    r: ProgressCondition,
    x: np.ndarray,
    t: int,
    store,
    determined,
    sampler: RegionSampler,
    predictor,
    K: int,
    n_max: int,
    rng: np.random.Generator,
) -> List[Tuple[np.ndarray, int]]:
    """Locally admissible (state, time) hypotheses, at most K.

    Per sampled state every duration hypothesis is screened against the
    admissible window and the conflict intervals, mapping each accepted
    duration to the earliest admissible time at or after it.  K = 1 uses the
    single typical duration, which makes this identical to the basic
    planner's time_assign.
    """
    mode = "single" if K == 1 else "multi"
    t_min = store.bound_extreme(r.lo, "min")
    t_max = store.bound_extreme(r.hi, "max")
    out: List[Tuple[np.ndarray, int]] = []
    if r.pred.eval(x) >= 0:
        blocked = conflict_intervals(x, determined, store)
        t_new = earliest_free_time(max(t, t_min), t_max, blocked)
        if t_new is not None:
            out.append((np.array(x), t_new))
            if len(out) >= K:
                return out
    for _ in range(n_max):
        try:
            x_cand = sampler.sample(r.pred, rng)
        except AllocationError:
            return out
        blocked = conflict_intervals(x_cand, determined, store)
        pred = predictor.predict(x, x_cand)
        seen_times = set()
        for dur in hypothesis_set(pred, mode):
            t_pred = t + dur
            if t_pred > t_max:
                continue
            t_new = earliest_free_time(max(t_pred, t_min), t_max, blocked)
            if t_new is None or t_new in seen_times:
                continue
            seen_times.add(t_new)
            out.append((x_cand, t_new))
            if len(out) >= K:
                return out
    return out


def segment_risks(
    report: ConsistencyReport,
    skeleton: Sequence[TimedWaypoint],
    tail_fraction: float,
) -> List[Tuple[int, float]]:
    """Tail-mean risk per skeleton segment; steps beyond the last waypoint
    (terminal hold and horizon padding) fold into the last segment."""
    times = sorted({wp.time for wp in skeleton})
    costs = np.asarray(report.step_costs, dtype=float)
    if len(times) < 2:
        return [(0, cvar(costs, tail_fraction) if costs.size else 0.0)]
    risks = []
    for k in range(len(times) - 1):
        lo = times[k]
        hi = times[k + 1] if k < len(times) - 2 else costs.size
        chunk = costs[lo:hi]
        risks.append((k, cvar(chunk, tail_fraction) if chunk.size else 0.0))
    return risks


def _worst_segment(risks: List[Tuple[int, float]]) -> int:
    best_k, best_r = risks[0]
    for k, r in risks[1:]:
        if r > best_r:
            best_k, best_r = k, r
    return best_k


@dataclass
class _Node:
    id: int
    path: Tuple[int, ...]  # node ids root..self
    parent_token: int
    commit: Optional[Tuple[ProgressCondition, np.ndarray, int]]
    commit_determined: tuple
    state: np.ndarray
    time: int
    remaining: Tuple[int, ...]
    determined: tuple
    waypoints: Tuple[TimedWaypoint, ...]


def ars_search(
    x0,
    d: Decomposition,
    sampler: RegionSampler,
    predictor,
    gen: Generator,
    ds: Optional[Dataset],
    dcm_cfg: Optional[DcmConfig],
    budget: Optional[ArsBudget] = None,
    mode: str = "full",
    eta: int = 1,
    horizon: Optional[int] = None,
    n_max: int = 1,
    rng: Optional[np.random.Generator] = None,
    *,
    start_time: int = 0,
    store=None,
    remaining_ids: Optional[Sequence[int]] = None,
    determined: Sequence[Tuple[int, int]] = (),
) -> ArsResult:
    """Stack-based anytime search over (condition order x candidates).

    ``full`` mode scores every completed plan, keeps the best, and backjumps
    to the worst-scoring segment's decision; ``first_solution`` returns the
    first plan whose generation succeeds, without scoring.  The keyword
    arguments resume from a replayed prefix, as in
    :func:`stlplan.allocate.allocate`.
    """
    if mode not in ("full", "first_solution"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "full" and ds is None:
        raise ValueError("full mode needs a dataset to score candidates")
    budget = budget or ArsBudget()
    rng = rng if rng is not None else np.random.default_rng(0)
    if not d.preprocessed:
        raise AllocationError("decomposition must be preprocessed before search")
    dcm_cfg = dcm_cfg or DcmConfig()

    store = store if store is not None else store_from(d)
    if not store.feasible:
        raise AllocationError("initial time-constraint set is infeasible")
    by_id = {c.id: c for c in d.reach + d.invar}
    x0 = np.asarray(x0, dtype=float)
    if remaining_ids is None:
        remaining_ids = tuple(c.id for c in d.reach)

    stats = ArsStats()
    t_start = _time.monotonic()
    deadline = t_start + budget.wall_clock if budget.wall_clock else None
    next_id = 0
    root = _Node(
        id=0,
        path=(0,),
        parent_token=store.snapshot(),
        commit=None,
        commit_determined=(),
        state=x0,
        time=start_time,
        remaining=tuple(remaining_ids),
        determined=tuple((by_id[i], s) for i, s in determined),
        waypoints=(TimedWaypoint(x0, start_time, None),),
    )
    next_id += 1
    stack = [root]
    best_plan: Optional[PlanTrajectory] = None
    best_report: Optional[ConsistencyReport] = None
    node_by_id: Dict[int, _Node] = {0: root}

    def prune_to(decision_id: int):
        stats.backjumps += 1
        stack[:] = [n for n in stack if decision_id not in n.path]

    while stack and stats.nodes < budget.N_iter:
        if deadline is not None and _time.monotonic() > deadline:
            break
        node = stack.pop()
        stats.nodes += 1
        store.restore(node.parent_token)
        if node.commit is not None:
            r, x_new, t_new = node.commit
            ok = update_constraint(store, r, x_new, t_new, node.commit_determined)
            assert ok, "re-applied commit became infeasible"

        if not node.remaining:
            alloc = AllocationResult(
                list(node.waypoints),
                store.clone(),
                AllocationStats(),
                tuple((inv.id, s) for inv, s in node.determined),
            )
            validate_allocation(alloc, d, reach_ids=remaining_ids)
            try:
                plan = complete_trajectory(
                    alloc, d, gen, eta, horizon, rng, start_time=start_time
                )
            except SegmentFailure as exc:
                # unify generation failure with a worst-scoring segment
                if mode == "full" and exc.segment >= 0:
                    decision = _decision_for_segment(node, exc.segment, node_by_id)
                    if decision is not None:
                        prune_to(decision)
                continue
            stats.completions += 1
            if mode == "first_solution":
                stats.wall_time = _time.monotonic() - t_start
                return ArsResult(plan, None, stats)
            report = score(plan, ds, dcm_cfg)
            if best_report is None or report.score > best_report.score:
                best_plan, best_report = plan, report
            if stats.completions >= budget.N_seq:
                break
            k_star = _worst_segment(
                segment_risks(report, plan.skeleton, dcm_cfg.tail_fraction)
            )
            decision = _decision_for_segment(node, k_star, node_by_id)
            if decision is not None:
                prune_to(decision)
            continue

        token = store.snapshot()
        children = []
        for r in order_conditions([by_id[i] for i in node.remaining], store):
            cands = multi_hypothesis_assign(
                r,
                node.state,
                node.time,
                store,
                node.determined,
                sampler,
                predictor,
                budget.K,
                n_max,
                rng,
            )
            for x_new, t_new in cands:
                probe = store.snapshot()
                ok = update_constraint(store, r, x_new, t_new, node.determined)
                store.restore(probe)
                if not ok:
                    continue
                determined = node.determined
                residual_id = d.trigger_residual.get(r.id)
                if residual_id is not None:
                    determined = determined + ((by_id[residual_id], t_new + 1),)
                child = _Node(
                    id=next_id,
                    path=node.path + (next_id,),
                    parent_token=token,
                    commit=(r, x_new, t_new),
                    commit_determined=node.determined,
                    state=x_new,
                    time=t_new,
                    remaining=tuple(i for i in node.remaining if i != r.id),
                    determined=determined,
                    waypoints=node.waypoints + (TimedWaypoint(x_new, t_new, r.id),),
                )
                node_by_id[next_id] = child
                next_id += 1
                children.append(child)
                stats.commits.append((r.id, t_new))
        stack.extend(reversed(children))

    stats.wall_time = _time.monotonic() - t_start
    return ArsResult(best_plan, best_report, stats)


def _decision_for_segment(
    leaf: _Node, k_star: int, node_by_id: Dict[int, "_Node"]
) -> Optional[int]:
    """Id of the decision node whose commit ended segment ``k_star``.

    Segment indices follow the deduplicated waypoint timeline; padding
    segments past the last commit clamp to the last decision.
    """
    commit_nodes = [node_by_id[i] for i in leaf.path[1:]]
    if not commit_nodes:
        return None
    times = sorted({wp.time for wp in leaf.waypoints})
    end_index = min(k_star + 1, len(times) - 1)
    target = times[end_index] if end_index >= 1 else times[-1]
    for n in commit_nodes:
        if n.commit is not None and n.commit[2] == target:
            return n.id
    return commit_nodes[-1].id
