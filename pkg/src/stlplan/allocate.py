"""Timed-waypoint allocation: urgency-ordered DFS over reach conditions.

The search walks reach conditions most-urgent first, proposes a waypoint
state and satisfaction time per condition (``time_assign``), and commits it
by tightening the time-constraint store (``update_constraint``).  A single
store is shared across the whole search through snapshot/restore: popping a
node rolls the journal back to the parent state and re-applies the node's
own commit, which is deterministic.

Every returned allocation passes the waypoint-level soundness validator:
the final store is feasible and, under its lexicographically smallest
assignment, each reach window contains its waypoint time and no determined
invariance active at a waypoint time is violated by that waypoint.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .decompose import Decomposition, ProgressCondition
from .stl import BALL, BALL_COMPLEMENT, CUSTOM, HALFSPACE, Predicate
from .timebase import ConstraintStore, store_from

__all__ = [
    "TimedWaypoint",
    "AllocationStats",
    "AllocationResult",
    "AllocationLimits",
    "AllocationError",
    "RegionSampler",
    "order_conditions",
    "conflict_intervals",
    "earliest_free_time",
    "time_assign",
    "update_constraint",
    "allocate",
    "validate_allocation",
]


class AllocationError(RuntimeError):
    pass


@dataclass
class TimedWaypoint:
    state: np.ndarray
    time: int
    condition_id: Optional[int] = None  # None for the initial waypoint

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)


@dataclass
class AllocationStats:
    nodes_visited: int = 0
    backtracks: int = 0
    # (condition id, time) per accepted child, in expansion order; lets the
    # refinement search prove it degenerates to this planner
    commits: List[Tuple[int, int]] = field(default_factory=list)


@dataclass
class AllocationResult:
    waypoints: List[TimedWaypoint]
    final_store: ConstraintStore
    stats: AllocationStats
    # (invariance id, concrete start step) for every activated residual
    determined: Tuple[Tuple[int, int], ...] = ()


@dataclass
class AllocationLimits:
    n_max: int = 1
    node_budget: int = 100_000
    wall_clock: float = 180.0


# ---------------------------------------------------------------------------
# Region sampling
# ---------------------------------------------------------------------------


class RegionSampler:
    """Proposes states satisfying a predicate inside a box workspace.

    Balls are sampled uniformly; complements and halfspaces by rejection
    against the workspace box; custom predicates run a short hit-and-run
    walk from a registered seed point.
    """

    def __init__(
        self,
        lo: Sequence[float],
        hi: Sequence[float],
        seed_points: Optional[Dict[str, Sequence[float]]] = None,
        max_attempts: int = 500,
        walk_steps: int = 16,
    ):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.seed_points = {
            k: np.asarray(v, dtype=float) for k, v in (seed_points or {}).items()
        }
        self.max_attempts = max_attempts
        self.walk_steps = walk_steps

    def sample(self, pred: Predicate, rng: np.random.Generator) -> np.ndarray:
        if pred.kind == BALL:
            return self._sample_ball(pred, rng)
        if pred.kind in (BALL_COMPLEMENT, HALFSPACE):
            return self._sample_rejection(pred, rng)
        return self._sample_walk(pred, rng)

    def _sample_ball(self, pred: Predicate, rng) -> np.ndarray:
        c, r = pred.center, pred.radius
        for _ in range(self.max_attempts):
            direction = rng.normal(size=c.shape[0])
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                continue
            radius = r * np.sqrt(rng.random())
            p = c + direction / norm * radius
            if np.all(p >= self.lo[: len(p)]) and np.all(p <= self.hi[: len(p)]):
                return p
        raise AllocationError(f"ball {pred.name} does not intersect the workspace")

    def _sample_rejection(self, pred: Predicate, rng) -> np.ndarray:
        for _ in range(self.max_attempts):
            p = rng.uniform(self.lo, self.hi)
            if pred.eval(p) >= 0:
                return p
        raise AllocationError(f"could not sample a state satisfying {pred.name}")

    def _sample_walk(self, pred: Predicate, rng) -> np.ndarray:
        seed = self.seed_points.get(pred.name)
        if seed is None:
            raise AllocationError(
                f"custom predicate {pred.name!r} needs a registered seed point"
            )
        if pred.eval(seed) < 0:
            raise AllocationError(f"seed point for {pred.name!r} violates it")
        x = np.array(seed, dtype=float)
        for _ in range(self.walk_steps):
            direction = rng.normal(size=x.shape[0])
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                continue
            direction /= norm
            # step range keeping the walk inside the workspace box
            with np.errstate(divide="ignore", invalid="ignore"):
                t_lo = np.where(direction != 0, (self.lo - x) / direction, -np.inf)
                t_hi = np.where(direction != 0, (self.hi - x) / direction, np.inf)
            lo = float(np.max(np.minimum(t_lo, t_hi)))
            hi = float(np.min(np.maximum(t_lo, t_hi)))
            if hi <= lo:
                continue
            for _ in range(8):
                cand = x + direction * rng.uniform(lo, hi)
                if pred.eval(cand) >= 0:
                    x = cand
                    break
        return x


# ---------------------------------------------------------------------------
# Local candidate generation
# ---------------------------------------------------------------------------


def order_conditions(
    remaining: Sequence[ProgressCondition], store: ConstraintStore
) -> List[ProgressCondition]:
    """Most temporally urgent first: ascending earliest potential deadline,
    then earliest potential start, then condition id."""
    return sorted(
        remaining,
        key=lambda r: (
            store.bound_extreme(r.hi, "min"),
            store.bound_extreme(r.lo, "min"),
            r.id,
        ),
    )


def conflict_intervals(
    x_cand: np.ndarray,
    determined: Sequence[Tuple[ProgressCondition, int]],
    store: ConstraintStore,
) -> List[Tuple[int, int]]:
    """Merged time intervals on which placing ``x_cand`` would violate a
    determined invariance: [start, min possible end] per violated one."""
    raw = []
    for inv, start in determined:
        if inv.pred.eval(x_cand) >= 0:
            continue
        d_min = store.bound_extreme(inv.hi, "min")
        if d_min >= start:
            raw.append((start, d_min))
    raw.sort()
    merged: List[Tuple[int, int]] = []
    for a, b in raw:
        if merged and a <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def earliest_free_time(
    lo: int, hi: int, blocked: Sequence[Tuple[int, int]]
) -> Optional[int]:
    if lo > hi:
        return None
    t = lo
    for a, b in blocked:
        if t < a:
            break
        if t <= b:
            t = b + 1
    return t if t <= hi else None


def time_assign(
    r: ProgressCondition,
    x: np.ndarray,
    t: int,
    store: ConstraintStore,
    determined: Sequence[Tuple[ProgressCondition, int]],
    sampler: RegionSampler,
    predictor,
    n_max: int,
    rng: np.random.Generator,
) -> Optional[Tuple[np.ndarray, int]]:
    """Propose a locally admissible (state, time) for a reach condition.

    The current state is tried first with a zero-length transition, which is
    what certifies conditions whose window already admits the current time
    (the time-zero triggers of always-requirements in particular); after
    that, up to ``n_max`` sampled states are screened against the admissible
    window and the conflict intervals.
    """
    t_min = store.bound_extreme(r.lo, "min")
    t_max = store.bound_extreme(r.hi, "max")
    if r.pred.eval(x) >= 0:
        blocked = conflict_intervals(x, determined, store)
        t_new = earliest_free_time(max(t, t_min), t_max, blocked)
        if t_new is not None:
            return np.array(x), t_new
    for _ in range(n_max):
        try:
            x_cand = sampler.sample(r.pred, rng)
        except AllocationError:
            return None
        blocked = conflict_intervals(x_cand, determined, store)
        t_pred = t + predictor.predict(x, x_cand).l_norm
        if t_pred > t_max:
            continue
        t_new = earliest_free_time(max(t_pred, t_min), t_max, blocked)
        if t_new is None:
            continue
        return x_cand, t_new
    return None


def update_constraint(
    store: ConstraintStore,
    r: ProgressCondition,
    x_new: np.ndarray,
    t_new: int,
    determined: Sequence[Tuple[ProgressCondition, int]],
) -> bool:
    """Commit (x', t') for a reach condition: pin its window around t' and
    truncate every determined invariance the waypoint violates."""
    store.add_constraint(r.lo, "<=", t_new)
    store.add_constraint(r.hi, ">=", t_new)
    for inv, _start in sorted(determined, key=lambda p: p[0].id):
        if inv.pred.eval(x_new) < 0:
            store.add_constraint(inv.hi, "<", t_new)
    return store.feasible


# ---------------------------------------------------------------------------
# Main DFS
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    parent_token: int
    commit: Optional[Tuple[ProgressCondition, np.ndarray, int]]
    commit_determined: Tuple[Tuple[ProgressCondition, int], ...]
    state: np.ndarray
    time: int
    remaining: Tuple[int, ...]
    determined: Tuple[Tuple[ProgressCondition, int], ...]
    waypoints: Tuple[TimedWaypoint, ...]


def allocate(
    x0,
    d: Decomposition,
    sampler: RegionSampler,
    predictor,
    limits: Optional[AllocationLimits] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    start_time: int = 0,
    store: Optional[ConstraintStore] = None,
    remaining_ids: Optional[Sequence[int]] = None,
    determined: Sequence[Tuple[int, int]] = (),
) -> Optional[AllocationResult]:
    """Depth-first allocation of all reach conditions from state ``x0``.

    Returns the first complete timed waypoint sequence with its final store,
    or None when the budget is exhausted or the tree is exhausted.  The
    keyword arguments let a replanner resume from a replayed prefix: a
    non-zero start time, a pre-constrained store, the subset of reach
    conditions still open, and the already-activated invariances as
    (invariance id, concrete start step) pairs.
    """
    limits = limits or AllocationLimits()
    rng = rng if rng is not None else np.random.default_rng(0)
    if not d.preprocessed:
        raise AllocationError("decomposition must be preprocessed before allocation")
    store = store if store is not None else store_from(d)
    if not store.feasible:
        raise AllocationError("initial time-constraint set is infeasible")
    by_id = {c.id: c for c in d.reach + d.invar}
    x0 = np.asarray(x0, dtype=float)
    if remaining_ids is None:
        remaining_ids = tuple(c.id for c in d.reach)

    stats = AllocationStats()
    deadline = _time.monotonic() + limits.wall_clock if limits.wall_clock else None
    root = _Node(
        parent_token=store.snapshot(),
        commit=None,
        commit_determined=(),
        state=x0,
        time=start_time,
        remaining=tuple(remaining_ids),
        determined=tuple((by_id[i], s) for i, s in determined),
        waypoints=(TimedWaypoint(x0, start_time, None),),
    )
    stack = [root]
    while stack:
        if deadline is not None and _time.monotonic() > deadline:
            return None
        node = stack.pop()
        stats.nodes_visited += 1
        if stats.nodes_visited > limits.node_budget:
            return None
        store.restore(node.parent_token)
        if node.commit is not None:
            r, x_new, t_new = node.commit
            ok = update_constraint(store, r, x_new, t_new, node.commit_determined)
            assert ok, "re-applied commit became infeasible"
        if not node.remaining:
            result = AllocationResult(
                list(node.waypoints),
                store.clone(),
                stats,
                tuple((inv.id, start) for inv, start in node.determined),
            )
            validate_allocation(result, d, reach_ids=remaining_ids)
            return result
        token = store.snapshot()
        children = _expand(
            node, token, store, by_id, d, sampler, predictor, limits, rng, stats
        )
        if not children:
            stats.backtracks += 1
        stack.extend(reversed(children))
    return None


def _expand(node, token, store, by_id, d, sampler, predictor, limits, rng, stats):
    """Candidate children in heuristic order, feasibility-screened."""
    remaining_conds = [by_id[i] for i in node.remaining]
    children = []
    for r in order_conditions(remaining_conds, store):
        cand = time_assign(
            r,
            node.state,
            node.time,
            store,
            node.determined,
            sampler,
            predictor,
            limits.n_max,
            rng,
        )
        if cand is None:
            continue
        x_new, t_new = cand
        probe = store.snapshot()
        ok = update_constraint(store, r, x_new, t_new, node.determined)
        store.restore(probe)
        if not ok:
            continue
        children.append(_make_child(node, token, r, x_new, t_new, d, by_id))
        stats.commits.append((r.id, t_new))
    return children


def _make_child(node, token, r, x_new, t_new, d, by_id) -> _Node:
    determined = node.determined
    residual_id = d.trigger_residual.get(r.id)
    if residual_id is not None:
        determined = determined + ((by_id[residual_id], t_new + 1),)
    return _Node(
        parent_token=token,
        commit=(r, x_new, t_new),
        commit_determined=node.determined,
        state=x_new,
        time=t_new,
        remaining=tuple(i for i in node.remaining if i != r.id),
        determined=determined,
        waypoints=node.waypoints + (TimedWaypoint(x_new, t_new, r.id),),
    )


# ---------------------------------------------------------------------------
# Waypoint-level soundness validator
# ---------------------------------------------------------------------------


def validate_allocation(
    result: AllocationResult,
    d: Decomposition,
    reach_ids: Optional[Sequence[int]] = None,
) -> None:
    """Assert the waypoint-level soundness contract of every allocation.

    Checks: final store feasible; every reach condition committed exactly
    once at a waypoint satisfying its predicate; under the lexicographically
    smallest feasible assignment, each reach window contains its waypoint
    time and no invariance window contains a waypoint violating it.
    ``reach_ids`` restricts the coverage check to a suffix allocation's open
    conditions.
    """
    store = result.final_store
    if not store.feasible:
        raise AllocationError("final store is infeasible")
    lam = store.pick_assignment()
    committed = {}
    for wp in result.waypoints:
        if wp.condition_id is not None:
            if wp.condition_id in committed:
                raise AllocationError(f"condition {wp.condition_id} committed twice")
            committed[wp.condition_id] = wp
    reach_set = (
        d.reach
        if reach_ids is None
        else [r for r in d.reach if r.id in set(reach_ids)]
    )
    for r in reach_set:
        wp = committed.get(r.id)
        if wp is None:
            raise AllocationError(f"reach condition {r.id} has no waypoint")
        if r.pred.eval(wp.state) < 0:
            raise AllocationError(f"waypoint for condition {r.id} violates predicate")
        if not r.lo.value(lam) <= wp.time <= r.hi.value(lam):
            raise AllocationError(
                f"waypoint time {wp.time} outside window "
                f"[{r.lo.value(lam)},{r.hi.value(lam)}] of condition {r.id}"
            )
    for inv in d.invar:
        a, b = inv.lo.value(lam), inv.hi.value(lam)
        if a > b:
            continue
        for wp in result.waypoints:
            if a <= wp.time <= b and inv.pred.eval(wp.state) < 0:
                raise AllocationError(
                    f"waypoint at t={wp.time} violates invariance {inv.id} "
                    f"active on [{a},{b}]"
                )
