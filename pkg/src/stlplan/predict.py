"""Transition-time prediction with the three-mode l_min/l_norm/l_max interface.

Two implementations stand behind the same interface: a kNN predictor that
quantile-summarizes the lengths of endpoint-matched dataset segments, and a
scaled-distance heuristic.  Predictions are in planning steps, always
rounded up so a transition is never promised faster than observed, and never
below one step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .dataset import Dataset, segment_length_samples

__all__ = [
    "TimePrediction",
    "HeuristicTimePredictor",
    "KnnTimePredictor",
    "hypothesis_set",
]


@dataclass(frozen=True)
class TimePrediction:
    l_min: int
    l_norm: int
    l_max: int
    gamma: float = 1.0

    def __post_init__(self):
        if not 1 <= self.l_min <= self.l_norm <= self.l_max:
            raise ValueError(
                f"prediction must satisfy 1 <= l_min <= l_norm <= l_max, "
                f"got ({self.l_min},{self.l_norm},{self.l_max})"
            )


def _scale(values: Tuple[float, float, float], gamma: float) -> TimePrediction:
    scaled = [max(1, int(np.ceil(gamma * v))) for v in values]
    scaled[1] = max(scaled[0], scaled[1])
    scaled[2] = max(scaled[1], scaled[2])
    return TimePrediction(scaled[0], scaled[1], scaled[2], gamma)


class HeuristicTimePredictor:
    """All modes equal ceil(gamma * c * dist(x, goal)); translation-invariant."""

    def __init__(self, metric: str = "euclidean", c: float = 1.0, gamma: float = 1.0):
        if metric not in ("manhattan", "euclidean"):
            raise ValueError(f"unknown metric {metric!r}")
        self.metric = metric
        self.c = float(c)
        self.gamma = float(gamma)

    def predict(self, x, x_goal) -> TimePrediction:
        x = np.asarray(x, dtype=float)
        g = np.asarray(x_goal, dtype=float)
        if self.metric == "manhattan":
            dist = float(np.abs(g - x).sum())
        else:
            dist = float(np.linalg.norm(g - x))
        v = self.c * dist
        return _scale((v, v, v), self.gamma)


class KnnTimePredictor:
    """Quantile summary of endpoint-matched dataset segment lengths.

    Fine-step lengths are converted to planning steps (divide by eta, round
    to nearest, at least one) and summarized at the configured quantiles;
    when no segment matches, the heuristic fallback answers instead.
    """

    def __init__(
        self,
        ds: Dataset,
        eta: int,
        gamma: float = 1.0,
        quantiles: Tuple[float, float, float] = (0.10, 0.50, 0.90),
        n_pairs: int = 8,
        max_endpoint_dist: float = 0.75,
        fallback: Optional[HeuristicTimePredictor] = None,
    ):
        if eta < 1:
            raise ValueError("eta must be a positive integer")
        self.ds = ds
        self.eta = int(eta)
        self.gamma = float(gamma)
        self.quantiles = quantiles
        self.n_pairs = int(n_pairs)
        self.max_endpoint_dist = float(max_endpoint_dist)
        self.fallback = fallback or HeuristicTimePredictor(
            "euclidean", c=4.2, gamma=gamma
        )

    def predict(self, x, x_goal) -> TimePrediction:
        z = self.ds.zeta(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        zg = self.ds.zeta(np.atleast_2d(np.asarray(x_goal, dtype=float)))[0]
        fine = segment_length_samples(
            self.ds, z, zg, self.n_pairs, self.max_endpoint_dist
        )
        if not fine:
            return self.fallback.predict(z, zg)
        steps = np.maximum(1, np.rint(np.asarray(fine, dtype=float) / self.eta))
        qs = np.quantile(steps, self.quantiles, method="nearest")
        return _scale((float(qs[0]), float(qs[1]), float(qs[2])), self.gamma)


def hypothesis_set(tp: TimePrediction, mode: str) -> List[int]:
    """Duration hypotheses consumed by allocation: a single typical length,
    or the deduplicated sorted three-mode set."""
    if mode == "single":
        return [tp.l_norm]
    if mode == "multi":
        return sorted({tp.l_min, tp.l_norm, tp.l_max})
    raise ValueError(f"unknown mode {mode!r}")
