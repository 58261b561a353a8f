"""Rollout-free dynamic consistency scoring of planned trajectories.

Each transition of a feature trajectory gets three local costs: how far the
next state (plus a few interpolated interior points) is from the offline
state manifold, how far the normalized local transition is from the offline
transition manifold, and a data-independent step regularizer (thresholded
step length, optional turning and smoothness penalties).  The trajectory
score is the negated tail mean of the combined costs, so a single severe
bottleneck dominates while isolated numerical noise does not.

The trajectory to be scored and the dataset must live at the same
resolution; callers scoring plans at planning scale should build the
dataset through :func:`stlplan.dataset.downsample_dataset`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset

__all__ = ["DcmConfig", "ConsistencyReport", "step_costs", "cvar", "tail_indices", "score"]


@dataclass
class DcmConfig:
    k_nn: int = 5
    w_state: float = 1.0
    w_trans: float = 1.0
    w_step: float = 0.5
    delta: Optional[float] = None  # None: 95th percentile of dataset step lengths
    lambda_turn: float = 0.0
    lambda_smooth: float = 0.0
    tail_fraction: float = 0.1
    interior_points: int = 3

    def __post_init__(self):
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ValueError("tail_fraction must be in (0, 1]")
        if min(self.w_state, self.w_trans, self.w_step) < 0:
            raise ValueError("weights must be non-negative")
        if self.interior_points < 0:
            raise ValueError("interior_points must be >= 0")

    def resolved_delta(self, ds: Dataset) -> float:
        return self.delta if self.delta is not None else ds.step_length_percentile(95)


@dataclass
class ConsistencyReport:
    step_costs: np.ndarray  # combined c_t, length T
    score: float  # -CVaR_tail(step_costs)
    c_state: np.ndarray
    c_trans: np.ndarray
    c_step: np.ndarray
    tail: List[int] = field(default_factory=list)  # indices of the tail set


def step_costs(
    z: np.ndarray, ds: Dataset, cfg: DcmConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """State-support, transition-support, and step-regularizer cost arrays
    for a feature trajectory z_0..z_T (one entry per transition)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need at least two feature states")
    if z.shape[1] != ds.feature_dim:
        raise ValueError(
            f"feature dimension {z.shape[1]} does not match dataset "
            f"feature dimension {ds.feature_dim}"
        )
    T = z.shape[0] - 1
    k = cfg.k_nn

    # state support: worst kNN distance over the arrival state and a few
    # interpolated interior points of each transition
    fractions = np.linspace(0.0, 1.0, cfg.interior_points + 2)[1:]
    probes = (
        z[:-1, None, :] + (z[1:] - z[:-1])[:, None, :] * fractions[:, None]
    )  # (T, probes, d)
    dists, _ = ds.state_index.query(probes.reshape(-1, z.shape[1]), k=k)
    dists = np.atleast_2d(dists.reshape(T * len(fractions), -1))[:, -1]
    c_state = dists.reshape(T, len(fractions)).max(axis=1)

    deltas = z[1:] - z[:-1]
    phi = ds.normalize_transition(np.hstack([z[:-1], deltas]))
    tdists, _ = ds.transition_index.query(phi, k=k)
    c_trans = np.atleast_2d(tdists.reshape(T, -1))[:, -1].copy()

    delta_thresh = cfg.resolved_delta(ds)
    c_len = np.maximum(np.linalg.norm(deltas, axis=1) - delta_thresh, 0.0)
    c_turn = np.zeros(T)
    c_smooth = np.zeros(T)
    if T > 1:
        prev, cur = deltas[:-1], deltas[1:]
        denom = (
            np.linalg.norm(prev, axis=1) * np.linalg.norm(cur, axis=1) + 1e-8
        )
        c_turn[1:] = 1.0 - (prev * cur).sum(axis=1) / denom
        c_smooth[1:] = np.linalg.norm(cur - prev, axis=1)
    c_step = c_len + cfg.lambda_turn * c_turn + cfg.lambda_smooth * c_smooth
    return c_state, c_trans, c_step


def tail_indices(costs: Sequence[float], tail_fraction: float) -> List[int]:
    """Indices of the ceil(tail_fraction * T) largest entries, ties broken
    by value then by position."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("empty cost list")
    k = int(np.ceil(tail_fraction * costs.size))
    order = sorted(range(costs.size), key=lambda i: (-costs[i], i))
    return order[:k]


def cvar(costs: Sequence[float], tail_fraction: float) -> float:
    """Mean of the ceil(tail_fraction * T) largest step costs."""
    costs = np.asarray(costs, dtype=float)
    idx = tail_indices(costs, tail_fraction)
    return float(costs[idx].mean())


def score(plan, ds: Dataset, cfg: Optional[DcmConfig] = None) -> ConsistencyReport:
    """Consistency report for a plan, scored at planning resolution."""
    cfg = cfg or DcmConfig()
    z = ds.zeta(plan.planning_states())
    c_state, c_trans, c_step = step_costs(z, ds, cfg)
    combined = cfg.w_state * c_state + cfg.w_trans * c_trans + cfg.w_step * c_step
    tail = tail_indices(combined, cfg.tail_fraction)
    return ConsistencyReport(
        step_costs=combined,
        score=-float(combined[tail].mean()),
        c_state=c_state,
        c_trans=c_trans,
        c_step=c_step,
        tail=tail,
    )
