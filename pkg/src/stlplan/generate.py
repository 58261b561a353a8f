"""Segment-wise trajectory completion against an allocated skeleton.

Between consecutive waypoints a generator produces a fine-resolution state
segment; boundary states are then fixed exactly to the waypoints, states
inside active invariance windows are projected back into their predicate
regions, and the segments are stitched in temporal order.  If invariances
outlast the final waypoint, a terminal holding segment keeps the plan at the
last state, and the plan is padded the same way up to the task horizon so
that downsampled robustness is always well defined.

Generators only produce raw geometry; the boundary/projection guarantees
live in :func:`generate_segment` so any backend (including an external
process) gets the same treatment.
"""

from __future__ import annotations

import heapq
import subprocess
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .allocate import AllocationResult, TimedWaypoint
from .dataset import Dataset, nearest_segment
from .decompose import Decomposition, ProgressCondition
from .stl import BALL, BALL_COMPLEMENT, HALFSPACE, Formula, Predicate
from .stl import eval_robustness_downsampled
from .timebase import ConstraintStore

__all__ = [
    "SegmentSpec",
    "PlanTrajectory",
    "SegmentFailure",
    "Generator",
    "GeometricGenerator",
    "DatasetWarpGenerator",
    "ExternalProcessGenerator",
    "project_state",
    "generate_segment",
    "choose_assignment",
    "instantiate_windows",
    "complete_trajectory",
    "verify_plan",
]

PROJECTION_MARGIN = 1e-3


class SegmentFailure(RuntimeError):
    """Generation failed for one segment; carries the segment index once
    complete_trajectory re-raises it."""

    def __init__(self, message: str, segment: int = -1):
        super().__init__(message)
        self.segment = segment


@dataclass
class SegmentSpec:
    start: np.ndarray
    goal: np.ndarray
    length: int  # planning steps
    active_invariances: List[Tuple[Predicate, Tuple[int, int]]] = field(
        default_factory=list
    )  # sub-interval in segment-relative planning steps
    eta: int = 1

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.length < 1:
            raise ValueError("segment length must be at least one planning step")
        for _, (a, b) in self.active_invariances:
            if not (0 <= a <= b <= self.length):
                raise ValueError(f"invariance sub-interval [{a},{b}] outside segment")

    @property
    def fine_count(self) -> int:
        return self.eta * self.length + 1


@dataclass
class PlanTrajectory:
    fine_states: np.ndarray  # (eta * (t_end - t_start) + 1, d)
    skeleton: List[TimedWaypoint]  # commit order, root first
    lambda_star: List[int]
    eta: int
    t_end: int
    invariance_windows: List[Tuple[ProgressCondition, int, int]] = field(
        default_factory=list
    )
    t_start: int = 0  # nonzero for replanned suffixes

    def planning_states(self) -> np.ndarray:
        return self.fine_states[:: self.eta]

    def fine_index(self, t: int) -> int:
        return self.eta * (t - self.t_start)

    def waypoint_times(self) -> List[int]:
        """Deduplicated increasing waypoint times, including t_end."""
        times = sorted({wp.time for wp in self.skeleton})
        if times[-1] != self.t_end:
            times.append(self.t_end)
        return times


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project_state(x: np.ndarray, pred: Predicate, margin: float = PROJECTION_MARGIN):
    """Nearest point satisfying the predicate with a small interior margin.

    Already-feasible states are returned unchanged.  Custom predicates have
    no closed-form projection and raise SegmentFailure.
    """
    x = np.asarray(x, dtype=float)
    if pred.eval(x) >= 0:
        return x
    if pred.kind == BALL:
        c, r = pred.center, pred.radius
        p = x[: len(c)]
        offset = p - c
        dist = np.linalg.norm(offset)
        target = c + offset / dist * (r - margin)
        out = np.array(x)
        out[: len(c)] = target
        return out
    if pred.kind == BALL_COMPLEMENT:
        c, r = pred.center, pred.radius
        p = x[: len(c)]
        offset = p - c
        dist = np.linalg.norm(offset)
        if dist == 0.0:
            offset = np.zeros_like(offset)
            offset[0] = 1.0
            dist = 1.0
        out = np.array(x)
        out[: len(c)] = c + offset / dist * (r + margin)
        return out
    if pred.kind == HALFSPACE:
        n, b = np.asarray(pred.params[0]), pred.params[1]
        p = x[: len(n)]
        shift = (np.dot(n, p) - b + margin) / np.dot(n, n)
        out = np.array(x)
        out[: len(n)] = p - shift * n
        return out
    raise SegmentFailure(f"no projection for custom predicate {pred.name!r}")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


class Generator:
    def generate(self, spec: SegmentSpec, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


def _resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """Resample a polyline to ``count`` states at constant arc-length speed."""
    points = np.asarray(points, dtype=float)
    deltas = np.diff(points, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    total = float(seg_len.sum())
    if total < 1e-12:
        return np.tile(points[0], (count, 1))
    breaks = np.concatenate([[0.0], np.cumsum(seg_len)])
    targets = np.linspace(0.0, total, count)
    out = np.column_stack(
        [np.interp(targets, breaks, points[:, j]) for j in range(points.shape[1])]
    )
    out[0] = points[0]
    out[-1] = points[-1]
    return out


class GeometricGenerator(Generator):
    """Shortest obstacle-avoiding polyline, resampled at constant speed.

    Routes around the configured circular obstacles plus any avoid-ball
    invariance active over the whole segment, via a visibility graph whose
    nodes are boundary samples of the inflated circles.
    """

    def __init__(
        self,
        obstacles: Sequence[Tuple[Sequence[float], float]] = (),
        lo: Sequence[float] = (0.0, 0.0),
        hi: Sequence[float] = (10.0, 10.0),
        clearance: float = 0.1,
        ring_points: int = 32,
    ):
        self.obstacles = [(np.asarray(c, dtype=float), float(r)) for c, r in obstacles]
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.clearance = float(clearance)
        self.ring_points = int(ring_points)

    def generate(self, spec: SegmentSpec, rng: np.random.Generator) -> np.ndarray:
        circles = list(self.obstacles)
        for pred, (a, b) in spec.active_invariances:
            if pred.kind == BALL_COMPLEMENT and a == 0 and b == spec.length:
                circles.append((pred.center, pred.radius))
        path = self._shortest_path(spec.start, spec.goal, circles)
        knots = _timing_knots(path, spec)
        if not knots:
            return _resample_polyline(path, spec.fine_count)
        return _resample_with_knots(path, spec, knots)

    # visibility-graph machinery ---------------------------------------

    def _shortest_path(self, start, goal, circles) -> np.ndarray:
        start = np.asarray(start, dtype=float)
        goal = np.asarray(goal, dtype=float)
        if not circles or self._clear(start, goal, circles, start, goal):
            return np.vstack([start, goal])
        nodes = [start, goal]
        for c, r in circles:
            ring_r = r + self.clearance
            for k in range(self.ring_points):
                ang = 2.0 * np.pi * k / self.ring_points
                p = c + ring_r * np.array([np.cos(ang), np.sin(ang)])
                if np.any(p < self.lo) or np.any(p > self.hi):
                    continue
                if any(
                    np.linalg.norm(p - c2) < r2 + 0.5 * self.clearance
                    for c2, r2 in circles
                    if c2 is not c
                ):
                    continue
                nodes.append(p)
        n = len(nodes)
        adjacency: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if self._clear(nodes[i], nodes[j], circles, start, goal):
                    w = float(np.linalg.norm(nodes[i] - nodes[j]))
                    adjacency[i].append((j, w))
                    adjacency[j].append((i, w))
        dist = [np.inf] * n
        prev = [-1] * n
        dist[0] = 0.0
        heap = [(0.0, 0)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > dist[u]:
                continue
            if u == 1:
                break
            for v, w in adjacency[u]:
                if du + w < dist[v]:
                    dist[v] = du + w
                    prev[v] = u
                    heapq.heappush(heap, (du + w, v))
        if not np.isfinite(dist[1]):
            raise SegmentFailure("no obstacle-avoiding path between waypoints")
        path = [1]
        while path[-1] != 0:
            path.append(prev[path[-1]])
        return np.vstack([nodes[i] for i in reversed(path)])

    def _clear(self, p, q, circles, start, goal) -> bool:
        for c, r in circles:
            # endpoints already closer than the test radius keep their own
            # distance as the allowance, so waypoints near circles stay reachable
            allowed = r + 0.5 * self.clearance
            for endpoint in (p, q):
                if endpoint is start or endpoint is goal:
                    d = float(np.linalg.norm(endpoint - c))
                    if d < allowed:
                        allowed = max(min(allowed, d - 1e-9), 0.0)
            if _segment_point_distance(p, q, c) < allowed:
                return False
        return True


def _timing_knots(path: np.ndarray, spec: SegmentSpec):
    """Arc-length caps for invariance windows closing mid-segment.

    A window active from the segment start whose predicate the goal violates
    (a dwell region to stay in, or a region to avoid for a while) caps the
    arc progress until the window ends at the last along-path position still
    satisfying it; travel resumes at constant speed afterwards.  Without
    this, uniform resampling plus projection would pin early states to the
    region boundary and leave a velocity discontinuity at the window end.
    """
    caps = []
    dense = None
    for pred, (a, b) in spec.active_invariances:
        if a > 1 or b >= spec.length:
            continue
        if pred.eval(spec.goal) >= 0 or pred.eval(spec.start) < 0:
            continue
        if dense is None:
            dense = _resample_polyline(path, 4 * spec.fine_count + 1)
        arc = np.concatenate(
            [[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))]
        )
        inside = np.array([pred.eval(p) >= 0.0 for p in dense])
        first_out = int(np.argmin(inside)) if not inside.all() else len(dense)
        s_cap = arc[max(first_out - 1, 0)]
        caps.append((b, float(s_cap)))
    if not caps:
        return []
    caps.sort()
    # a later, tighter cap also binds earlier knots
    for i in range(len(caps) - 2, -1, -1):
        caps[i] = (caps[i][0], min(caps[i][1], caps[i + 1][1]))
    return caps


def _resample_with_knots(path: np.ndarray, spec: SegmentSpec, knots) -> np.ndarray:
    deltas = np.diff(path, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    total = float(seg_len.sum())
    if total < 1e-12:
        return np.tile(path[0], (spec.fine_count, 1))
    breaks = np.concatenate([[0.0], np.cumsum(seg_len)])
    knot_t = [0.0] + [float(t) for t, _ in knots] + [float(spec.length)]
    knot_s = [0.0] + [min(s, total) for _, s in knots] + [total]
    times = np.linspace(0.0, spec.length, spec.fine_count)
    targets = np.interp(times, knot_t, knot_s)
    out = np.column_stack(
        [np.interp(targets, breaks, path[:, j]) for j in range(path.shape[1])]
    )
    out[0] = path[0]
    out[-1] = path[-1]
    return out


def _segment_point_distance(p, q, c) -> float:
    d = q - p
    denom = float(np.dot(d, d))
    if denom < 1e-18:
        return float(np.linalg.norm(c - p))
    t = float(np.clip(np.dot(c - p, d) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p + t * d - c))


class DatasetWarpGenerator(Generator):
    """Warps the nearest endpoint-matched dataset segment onto the boundary
    states; falls back to a straight line when the corpus has no match."""

    def __init__(self, ds: Dataset):
        self.ds = ds

    def generate(self, spec: SegmentSpec, rng: np.random.Generator) -> np.ndarray:
        seg = nearest_segment(self.ds, spec.start, spec.goal)
        count = spec.fine_count
        if seg is None:
            return _resample_polyline(np.vstack([spec.start, spec.goal]), count)
        base = _resample_polyline(seg, count)
        w = np.linspace(0.0, 1.0, count)[:, None]
        return base + (1.0 - w) * (spec.start - base[0]) + w * (spec.goal - base[-1])


class ExternalProcessGenerator(Generator):
    """Pipes the segment spec to an external command, line-oriented text in
    and out, so a learned generator can be plugged in without code changes.

    stdin::

        segment <length> <eta> <dim>
        start <d floats>
        goal <d floats>
        invariance <kind> <params...> <a> <b>   (one line per active window)

    stdout: ``eta*length+1`` lines of ``d`` floats.
    """

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout

    def generate(self, spec: SegmentSpec, rng: np.random.Generator) -> np.ndarray:
        dim = spec.start.shape[0]
        lines = [f"segment {spec.length} {spec.eta} {dim}"]
        lines.append("start " + " ".join(repr(v) for v in spec.start))
        lines.append("goal " + " ".join(repr(v) for v in spec.goal))
        for pred, (a, b) in spec.active_invariances:
            params = " ".join(
                str(v) for group in pred.params for v in np.atleast_1d(group)
            )
            lines.append(f"invariance {pred.kind} {params} {a} {b}")
        try:
            proc = subprocess.run(
                self.command,
                input="\n".join(lines) + "\n",
                capture_output=True,
                text=True,
                timeout=self.timeout,
                check=True,
            )
        except (subprocess.SubprocessError, OSError) as exc:
            raise SegmentFailure(f"external generator failed: {exc}") from exc
        rows = [r for r in proc.stdout.splitlines() if r.strip()]
        if len(rows) != spec.fine_count:
            raise SegmentFailure(
                f"external generator returned {len(rows)} states, "
                f"expected {spec.fine_count}"
            )
        return np.array([[float(v) for v in r.split()] for r in rows])


# ---------------------------------------------------------------------------
# Segment-level contract
# ---------------------------------------------------------------------------


def generate_segment(
    spec: SegmentSpec, gen: Generator, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Generate one segment and enforce its contract: exactly
    ``eta*length+1`` states, exact boundary states, and every state inside
    an active invariance window satisfying its predicate after projection."""
    rng = rng if rng is not None else np.random.default_rng(0)
    states = np.asarray(gen.generate(spec, rng), dtype=float)
    if states.shape != (spec.fine_count, spec.start.shape[0]):
        raise SegmentFailure(
            f"generator returned shape {states.shape}, "
            f"expected {(spec.fine_count, spec.start.shape[0])}"
        )
    states[0] = spec.start
    states[-1] = spec.goal
    eta = spec.eta
    for pred, (a, b) in spec.active_invariances:
        for i in range(eta * a, eta * b + 1):
            if pred.eval(states[i]) >= 0:
                continue
            if i in (0, states.shape[0] - 1):
                raise SegmentFailure(
                    f"boundary state violates invariance {pred.name}"
                )
            states[i] = project_state(states[i], pred)
    # conjunctions are projected sequentially, so re-check the result
    for pred, (a, b) in spec.active_invariances:
        for i in range(eta * a, eta * b + 1):
            if pred.eval(states[i]) < 0:
                raise SegmentFailure(
                    f"projection failed for invariance {pred.name} at fine step {i}"
                )
    return states


# ---------------------------------------------------------------------------
# Whole-plan completion
# ---------------------------------------------------------------------------


def choose_assignment(store: ConstraintStore) -> List[int]:
    """The deterministic assignment that fixes all invariance windows."""
    return store.pick_assignment()


def instantiate_windows(
    d: Decomposition, lam: Sequence[int]
) -> List[Tuple[ProgressCondition, int, int]]:
    """Concrete nonempty invariance windows under an assignment."""
    out = []
    for inv in d.invar:
        a, b = inv.lo.value(lam), inv.hi.value(lam)
        if a <= b:
            out.append((inv, a, b))
    return out


def _dedupe_timeline(waypoints: Sequence[TimedWaypoint]) -> List[TimedWaypoint]:
    by_time: dict = {}
    for wp in sorted(waypoints, key=lambda w: w.time):
        if wp.time in by_time:
            if not np.array_equal(by_time[wp.time].state, wp.state):
                raise SegmentFailure(
                    f"conflicting waypoint states at time {wp.time}"
                )
            continue
        by_time[wp.time] = wp
    return [by_time[t] for t in sorted(by_time)]


def build_segments(
    timeline: Sequence[TimedWaypoint],
    windows: Sequence[Tuple[ProgressCondition, int, int]],
    eta: int,
) -> List[SegmentSpec]:
    """Segment specs between consecutive timeline entries, each carrying the
    sub-intervals of the invariance windows that overlap it."""
    specs = []
    for a, b in zip(timeline[:-1], timeline[1:]):
        active = []
        for inv, lo, hi in windows:
            s, e = max(lo, a.time), min(hi, b.time)
            if s <= e:
                active.append((inv.pred, (s - a.time, e - a.time)))
        specs.append(
            SegmentSpec(a.state, b.state, b.time - a.time, active, eta)
        )
    return specs


def complete_trajectory(
    alloc: AllocationResult,
    d: Decomposition,
    gen: Generator,
    eta: int,
    horizon: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    start_time: int = 0,
) -> PlanTrajectory:
    """Complete an allocation into a fine trajectory and assert the
    boundary-fixing and invariance conditions of the soundness argument.

    ``horizon`` extends the terminal hold so the plan spans the full task
    horizon; segment failures re-raise with the failing segment index.  A
    nonzero ``start_time`` builds a replanned suffix whose fine states cover
    [start_time, t_end] only.
    """
    lam = choose_assignment(alloc.final_store)
    windows = instantiate_windows(d, lam)
    timeline = _dedupe_timeline(alloc.waypoints)
    if timeline[0].time != start_time:
        raise SegmentFailure(
            f"first waypoint at t={timeline[0].time}, expected {start_time}"
        )
    t_end = timeline[-1].time
    for _, _, hi in windows:
        t_end = max(t_end, hi)
    if horizon is not None:
        t_end = max(t_end, horizon)
    if t_end > timeline[-1].time:
        timeline.append(TimedWaypoint(timeline[-1].state, t_end, None))
    if len(timeline) == 1:  # single waypoint, zero-length task
        fine = np.tile(timeline[0].state, (1, 1))
        return PlanTrajectory(
            fine, list(alloc.waypoints), lam, eta, start_time, windows, start_time
        )

    specs = build_segments(timeline, windows, eta)
    pieces = []
    for k, spec in enumerate(specs):
        try:
            seg = generate_segment(spec, gen, rng)
        except SegmentFailure as exc:
            raise SegmentFailure(str(exc), segment=k) from None
        pieces.append(seg if k == 0 else seg[1:])
    fine = np.vstack(pieces)

    plan = PlanTrajectory(
        fine, list(alloc.waypoints), lam, eta, t_end, windows, start_time
    )
    _assert_plan_conditions(plan, timeline)
    return plan


def _assert_plan_conditions(plan: PlanTrajectory, timeline) -> None:
    for wp in timeline:
        if not np.array_equal(plan.fine_states[plan.fine_index(wp.time)], wp.state):
            raise SegmentFailure(f"boundary state at t={wp.time} not fixed")
    for inv, a, b in plan.invariance_windows:
        a = max(a, plan.t_start)
        if a > b:
            continue
        for i in range(plan.fine_index(a), plan.fine_index(b) + 1):
            if inv.pred.eval(plan.fine_states[i]) < 0:
                raise SegmentFailure(
                    f"invariance {inv.id} violated at fine index {i}"
                )


def verify_plan(plan: PlanTrajectory, f: Formula, eta: Optional[int] = None) -> float:
    """Planning-level robustness of the plan; the pipeline requires this to
    be non-negative for every plan it returns."""
    if plan.t_start != 0:
        raise ValueError("verify_plan needs a full plan, not a suffix")
    return eval_robustness_downsampled(f, plan.fine_states, eta or plan.eta)


# ---------------------------------------------------------------------------
# Plan trace files
# ---------------------------------------------------------------------------


def write_plan_trace(path, task_id: str, plan: PlanTrajectory, stats: str = "") -> None:
    """Text trace consumed by the score and replan-sim subcommands:
    header, skeleton waypoints, chosen assignment, then the fine states."""
    lines = [f"plan {task_id}", f"eta {plan.eta}", f"t_end {plan.t_end}"]
    if stats:
        lines.append(f"stats {stats}")
    for i, wp in enumerate(plan.skeleton):
        state = " ".join(repr(float(v)) for v in wp.state)
        lines.append(f"wp {i} {wp.time} {state}")
    lines.append("lambda " + " ".join(str(v) for v in plan.lambda_star))
    lines.append("fine")
    for row in plan.fine_states:
        lines.append(" ".join(repr(float(v)) for v in row))
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")


def read_plan_trace(path) -> Tuple[str, PlanTrajectory]:
    """Inverse of :func:`write_plan_trace`; invariance windows and waypoint
    condition ids are not part of the trace and come back empty."""
    from pathlib import Path

    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("plan "):
        raise ValueError(f"{path}: not a plan trace")
    task_id = lines[0].split(None, 1)[1]
    eta = t_end = None
    skeleton: List[TimedWaypoint] = []
    lam: List[int] = []
    fine_rows: List[List[float]] = []
    in_fine = False
    for line in lines[1:]:
        if not line.strip():
            continue
        if in_fine:
            fine_rows.append([float(v) for v in line.split()])
            continue
        head, *rest = line.split()
        if head == "eta":
            eta = int(rest[0])
        elif head == "t_end":
            t_end = int(rest[0])
        elif head == "stats":
            continue
        elif head == "wp":
            skeleton.append(
                TimedWaypoint(np.array([float(v) for v in rest[2:]]), int(rest[1]))
            )
        elif head == "lambda":
            lam = [int(v) for v in rest]
        elif head == "fine":
            in_fine = True
    if eta is None or t_end is None or not fine_rows:
        raise ValueError(f"{path}: incomplete plan trace")
    plan = PlanTrajectory(np.asarray(fine_rows), skeleton, lam, eta, t_end)
    return task_id, plan
