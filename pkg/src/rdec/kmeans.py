"""Lloyd's algorithm with restarts, used for centroid initialization and baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, dim)
    assignments: np.ndarray  # (n,) int64
    inertia: float
    # Per-iteration inertia of the winning run; Lloyd guarantees it never increases.
    inertia_history: list[float]


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded; clamp tiny negative round-off.
    d = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    n = points.shape[0]
    centroids = points[rng.choice(n, size=k, replace=False)].copy()
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        dists = _squared_distances(points, centroids)
        new_assignments = np.argmin(dists, axis=1)  # ties go to the lower index
        history.append(float(dists[np.arange(n), new_assignments].sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        taken = np.zeros(n, dtype=bool)
        point_cost = dists[np.arange(n), assignments]
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                # Reseed an empty cluster at the point currently farthest
                # from its assigned centroid (each repair takes a fresh point).
                cost = np.where(taken, -np.inf, point_cost)
                far = int(np.argmax(cost))
                centroids[j] = points[far]
                taken[far] = True
    dists = _squared_distances(points, centroids)
    assignments = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(n), assignments].sum())
    return centroids, assignments, inertia, history


def kmeans(
    points: np.ndarray,
    k: int,
    restarts: int = 20,
    max_iter: int = 300,
    seed: int = 0,
) -> KMeansResult:
    """Best-inertia clustering over independent random-point restarts.

    Each restart draws its initial centroids from a generator seeded with
    (seed, restart index), so runs are reproducible and independent of
    whether restarts execute sequentially or not.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if points.ndim != 2 or points.shape[0] < k:
        raise ValueError(f"need at least {k} points, got shape {points.shape}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    best: KMeansResult | None = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centroids, assignments, inertia, history = _lloyd(points, k, rng, max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(centroids, assignments, inertia, history)
    return best
