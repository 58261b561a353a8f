"""Offline trajectory corpus: ingestion, normalization, kNN support indexes.

The dataset file format is line-oriented plain text so fixtures stay
diffable and the simulator can generate corpora directly::

    dim=<d>
    traj <id> <len>
    <len lines of d space-separated decimals>
    ...

Transition features are ``[z_t; z_{t+1}-z_t]`` within one trajectory only,
normalized per dimension.  kNN queries are exact (scipy kd-tree).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Trajectory",
    "Dataset",
    "DatasetError",
    "load_dataset",
    "save_dataset",
    "build_dataset",
    "downsample_dataset",
    "knn_distance",
    "segment_length_samples",
    "nearest_segment",
]


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent trajectory data."""


@dataclass
class Trajectory:
    states: np.ndarray  # (T, d) fine-resolution states
    meta: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise DatasetError("trajectory needs at least 2 states of equal dimension")

    def __len__(self) -> int:
        return self.states.shape[0]


FeatureMap = Optional[Union[Callable[[np.ndarray], np.ndarray], Sequence[int]]]


def _resolve_feature_map(feature_map: FeatureMap):
    if feature_map is None:
        return lambda x: x, "identity"
    if callable(feature_map):
        return feature_map, "callable"
    cols = tuple(int(c) for c in feature_map)
    return (lambda x: x[..., cols]), f"columns{cols}"


@dataclass
class Dataset:
    trajectories: List[Trajectory]
    feature_map: FeatureMap = None
    _zeta: Callable = field(init=False, repr=False)
    feature_dim: int = field(init=False)
    state_points: np.ndarray = field(init=False, repr=False)
    transition_raw: np.ndarray = field(init=False, repr=False)
    norm_mean: np.ndarray = field(init=False)
    norm_std: np.ndarray = field(init=False)
    state_index: cKDTree = field(init=False, repr=False)
    transition_index: cKDTree = field(init=False, repr=False)
    # per-trajectory feature arrays, for segment searches
    _features: List[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.trajectories:
            raise DatasetError("dataset is empty")
        zeta, _ = _resolve_feature_map(self.feature_map)
        self._zeta = zeta
        dims = {t.states.shape[1] for t in self.trajectories}
        if len(dims) != 1:
            raise DatasetError(f"inconsistent state dimensions: {sorted(dims)}")
        self._features = [np.asarray(zeta(t.states), dtype=float) for t in self.trajectories]
        self.feature_dim = self._features[0].shape[1]
        self.state_points = np.vstack(self._features)
        bounds = np.cumsum([0] + [len(z) for z in self._features])
        self._slices = [
            slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])
        ]
        trans = [
            np.hstack([z[:-1], z[1:] - z[:-1]]) for z in self._features
        ]
        self.transition_raw = np.vstack(trans)
        self.norm_mean = self.transition_raw.mean(axis=0)
        std = self.transition_raw.std(axis=0)
        std[std == 0.0] = 1.0
        self.norm_std = std
        self.state_index = cKDTree(self.state_points)
        self.transition_index = cKDTree(
            (self.transition_raw - self.norm_mean) / self.norm_std
        )

    def zeta(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(self._zeta(np.asarray(states, dtype=float)), dtype=float)

    def normalize_transition(self, phi: np.ndarray) -> np.ndarray:
        return (np.asarray(phi, dtype=float) - self.norm_mean) / self.norm_std

    def transition_count(self) -> int:
        return self.transition_raw.shape[0]

    def step_length_percentile(self, q: float) -> float:
        d = self.feature_dim
        deltas = self.transition_raw[:, d:]
        return float(np.percentile(np.linalg.norm(deltas, axis=1), q))


def build_dataset(trajectories: Sequence[Trajectory], feature_map: FeatureMap = None) -> Dataset:
    return Dataset(list(trajectories), feature_map)


def downsample_dataset(ds: Dataset, stride: int) -> Dataset:
    """Dataset view at a coarser resolution (every ``stride``-th state), so
    transition statistics match trajectories scored at that resolution."""
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    if stride == 1:
        return ds
    kept = [
        Trajectory(t.states[::stride], t.meta)
        for t in ds.trajectories
        if t.states[::stride].shape[0] >= 2
    ]
    if not kept:
        raise DatasetError(f"no trajectory survives downsampling by {stride}")
    return Dataset(kept, ds.feature_map)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def save_dataset(path, trajectories: Sequence[Trajectory]) -> None:
    if not trajectories:
        raise DatasetError("refusing to write an empty dataset")
    dim = trajectories[0].states.shape[1]
    buf = io.StringIO()
    buf.write(f"dim={dim}\n")
    for i, traj in enumerate(trajectories):
        meta = traj.meta or str(i)
        buf.write(f"traj {meta} {len(traj)}\n")
        for row in traj.states:
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")
    Path(path).write_text(buf.getvalue())


def load_dataset(path, feature_map: FeatureMap = None) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise DatasetError(f"{path}: missing 'dim=<d>' header")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise DatasetError(f"{path}: bad dimension {lines[0]!r}") from None
    trajectories: List[Trajectory] = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        parts = lines[i].split()
        if parts[0] != "traj" or len(parts) != 3:
            raise DatasetError(f"{path}:{i + 1}: expected 'traj <id> <len>'")
        meta, length = parts[1], int(parts[2])
        if length < 2:
            raise DatasetError(f"{path}:{i + 1}: trajectory shorter than 2 states")
        rows = []
        for j in range(length):
            vals = lines[i + 1 + j].split()
            if len(vals) != dim:
                raise DatasetError(
                    f"{path}:{i + 2 + j}: expected {dim} values, got {len(vals)}"
                )
            rows.append([float(v) for v in vals])
        trajectories.append(Trajectory(np.asarray(rows), meta))
        i += 1 + length
    if not trajectories:
        raise DatasetError(f"{path}: no trajectories")
    return Dataset(trajectories, feature_map)


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def knn_distance(index: cKDTree, query, k: int) -> float:
    """Euclidean distance to the k-th nearest indexed point (exact)."""
    if k < 1:
        raise ValueError("k must be positive")
    if k > index.n:
        raise ValueError(f"k={k} exceeds indexed point count {index.n}")
    dists, _ = index.query(np.asarray(query, dtype=float), k=k)
    return float(np.atleast_1d(dists)[-1])


def segment_length_samples(
    ds: Dataset,
    start,
    goal,
    n_pairs: int = 8,
    max_endpoint_dist: float = np.inf,
) -> List[int]:
    """Lengths (fine steps) of dataset segments whose endpoints best match
    (start, goal).

    Per trajectory, the forward pair (t1 < t2) minimizing the summed feature
    distance to start and goal is selected; pairs with either endpoint
    farther than ``max_endpoint_dist`` are discarded, and the best
    ``n_pairs`` across trajectories are returned.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    all_start = np.linalg.norm(ds.state_points - start, axis=1)
    all_goal = np.linalg.norm(ds.state_points - goal, axis=1)
    scored: List[Tuple[float, int]] = []
    for sl in ds._slices:
        ds_start = all_start[sl]
        ds_goal = all_goal[sl]
        t1, t2 = _best_forward_pair(ds_start, ds_goal)
        if ds_start[t1] > max_endpoint_dist or ds_goal[t2] > max_endpoint_dist:
            continue
        scored.append((float(ds_start[t1] + ds_goal[t2]), t2 - t1))
    scored.sort(key=lambda p: p[0])
    return [length for _, length in scored[:n_pairs]]


def _best_forward_pair(ds_start: np.ndarray, ds_goal: np.ndarray) -> Tuple[int, int]:
    """Indices t1 < t2 minimizing ds_start[t1] + ds_goal[t2] (vectorized
    prefix-minimum scan)."""
    best_prefix = np.minimum.accumulate(ds_start)
    idx = np.arange(len(ds_start))
    arg_prefix = np.maximum.accumulate(
        np.where(ds_start <= best_prefix, idx, 0)
    )
    totals = best_prefix[:-1] + ds_goal[1:]
    t2 = int(np.argmin(totals)) + 1
    return int(arg_prefix[t2 - 1]), t2


def nearest_segment(ds: Dataset, start, goal) -> Optional[np.ndarray]:
    """Feature states of the single best endpoint-matching forward segment,
    or None when the corpus has no forward pair at all."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    all_start = np.linalg.norm(ds.state_points - start, axis=1)
    all_goal = np.linalg.norm(ds.state_points - goal, axis=1)
    best = None
    for z, sl in zip(ds._features, ds._slices):
        t1, t2 = _best_forward_pair(all_start[sl], all_goal[sl])
        total = float(all_start[sl][t1] + all_goal[sl][t2])
        if best is None or total < best[0]:
            best = (total, z, t1, t2)
    if best is None:
        return None
    _, z, t1, t2 = best
    return np.array(z[t1 : t2 + 1])
