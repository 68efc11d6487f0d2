"""Default-box aspect-ratio design: 1-D k-means over ground-truth box ratios.

Aspect ratio is height / width throughout this module (flip at the CLI with
--ratio-convention). Clustering is Lloyd's algorithm with deterministic
quantile initialization, so identical inputs give bit-identical results.
Recommended centers that sit too close together are flagged: near-duplicate
default boxes all match the same ground truth and only add computation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import BBox


class DegenerateInputError(ValueError):
    """Fewer distinct sample values than requested clusters."""


@dataclass(frozen=True)
class ClusterResult:
    centers: tuple[float, ...]          # strictly ascending
    assignments: tuple[int, ...]        # per-sample index into centers
    wcss: float                         # within-cluster sum of squares
    iterations: int
    wcss_history: tuple[float, ...]     # wcss after each Lloyd iteration


@dataclass(frozen=True)
class SeparationWarning:
    lower: float
    upper: float
    gap: float

    def __str__(self) -> str:
        return f"centers {self.lower:g} and {self.upper:g} are only {self.gap:g} apart"


def extract_aspect_ratios(boxes: Iterable[BBox], height_over_width: bool = True) -> list[float]:
    """One ratio sample per box; h/w by default, w/h when flipped."""
    if height_over_width:
        return [b.h / b.w for b in boxes]
    return [b.w / b.h for b in boxes]


def _initial_centers(values: np.ndarray, k: int) -> np.ndarray:
    ordered = np.sort(values)
    quantiles = (np.arange(k) + 0.5) / k
    centers = np.quantile(ordered, quantiles)
    if np.unique(centers).size == k:
        return centers
    # duplicate-heavy data can collapse quantiles; fall back to spreading the
    # initial centers over the distinct values at the same quantile ranks
    unique = np.unique(ordered)
    ranks = np.minimum((quantiles * unique.size).astype(int), unique.size - 1)
    return unique[ranks]


def kmeans_1d(samples: Sequence[float], k: int, max_iterations: int = 100) -> ClusterResult:
    """Cluster 1-D samples with Lloyd's algorithm.

    Deterministic: centers start at the (i+0.5)/k quantiles, samples tie to
    the lower-index center, and an emptied cluster is reseeded at the sample
    farthest from its assigned center. Stops when assignments are stable or
    after max_iterations.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be positive, got {max_iterations}")
    values = np.asarray(list(samples), dtype=np.float64)
    if values.size and not np.all(np.isfinite(values) & (values > 0)):
        raise ValueError("samples must be positive and finite")
    distinct = np.unique(values).size
    if distinct < k:
        raise DegenerateInputError(f"need at least {k} distinct values, got {distinct}")

    centers = _initial_centers(values, k)
    assignments = np.full(values.size, -1, dtype=np.int64)
    history: list[float] = []
    iterations = 0
    for _ in range(max_iterations):
        iterations += 1
        dist = np.abs(values[:, None] - centers[None, :])
        new_assignments = np.argmin(dist, axis=1)  # argmin ties to the lower index
        for ci in range(k):
            if not np.any(new_assignments == ci):
                # reseed at the farthest sample, never draining another
                # cluster down to zero
                d = np.abs(values - centers[new_assignments])
                sizes = np.bincount(new_assignments, minlength=k)
                d[sizes[new_assignments] <= 1] = -np.inf
                worst = int(np.argmax(d))
                new_assignments[worst] = ci
        for ci in range(k):
            centers[ci] = values[new_assignments == ci].mean()
        history.append(float(np.sum((values - centers[new_assignments]) ** 2)))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments

    order = np.argsort(centers, kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return ClusterResult(
        centers=tuple(float(c) for c in centers[order]),
        assignments=tuple(int(i) for i in remap[assignments]),
        wcss=history[-1],
        iterations=iterations,
        wcss_history=tuple(history),
    )


def validate_separation(result: ClusterResult, min_separation: float) -> list[SeparationWarning]:
    """Warn about each adjacent center pair closer than min_separation."""
    if min_separation <= 0:
        raise ValueError(f"min_separation must be positive, got {min_separation}")
    warnings = []
    for lo, hi in zip(result.centers, result.centers[1:]):
        gap = hi - lo
        if gap < min_separation:
            warnings.append(SeparationWarning(lo, hi, gap))
    return warnings
