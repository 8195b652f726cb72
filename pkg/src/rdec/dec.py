"""Soft-assignment clustering head.

Embedded points are assigned to centroids with a Student-t kernel, the
assignments are sharpened into a frequency-normalized target, and the
model is trained to match that target under a KL objective. The gradient
helper differentiates the KL with respect to both the embedded points and
the centroids while the target stays fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Matrix, ShapeMismatchError


class DegenerateClusterError(RuntimeError):
    """A soft cluster frequency collapsed to zero."""


class InfiniteDivergenceError(ValueError):
    """KL(p || q) has q = 0 where p > 0."""


@dataclass
class SoftAssignment:
    q: Matrix  # (n, k), rows sum to 1
    alpha: float


@dataclass
class TargetDistribution:
    p: Matrix  # (n, k), rows sum to 1
    s: float
    frequencies: np.ndarray  # column sums of q, length k


def squared_distances(z: Matrix, centroids: Matrix) -> Matrix:
    """Pairwise ||z_i - u_j||^2, clamped at 0 against round-off."""
    if z.ndim != 2 or centroids.ndim != 2 or z.shape[1] != centroids.shape[1]:
        raise ShapeMismatchError(
            f"points {z.shape} and centroids {centroids.shape} differ in dimension"
        )
    d = (
        np.sum(z**2, axis=1)[:, None]
        - 2.0 * z @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kernel(dists: Matrix, alpha: float) -> Matrix:
    return (1.0 + dists / alpha) ** (-(alpha + 1.0) / 2.0)


def soft_assign(z: Matrix, centroids: Matrix, alpha: float = 1.0) -> SoftAssignment:
    """Student-t similarity between each point and each centroid, row-normalized."""
    if centroids.shape[0] < 1:
        raise ValueError("need at least one centroid")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    kernels = _kernel(squared_distances(z, centroids), alpha)
    q = kernels / kernels.sum(axis=1, keepdims=True)
    return SoftAssignment(q=q, alpha=alpha)


def target_distribution(assignment: SoftAssignment, s: float = 2.0) -> TargetDistribution:
    """Sharpen soft assignments into the self-training target.

    Each q is raised to the power s and divided by its soft cluster
    frequency (column sum), then rows are renormalized. Raising s pushes
    rows toward their argmax; the frequency division biases marginal
    points toward less populated clusters.
    """
    if s < 1.0:
        raise ValueError(f"sharpening exponent must be >= 1, got {s}")
    q = assignment.q
    frequencies = q.sum(axis=0)
    if np.any(frequencies <= 0.0):
        dead = np.flatnonzero(frequencies <= 0.0).tolist()
        raise DegenerateClusterError(f"clusters {dead} have zero soft frequency")
    weighted = q**s / frequencies
    p = weighted / weighted.sum(axis=1, keepdims=True)
    return TargetDistribution(p=p, s=s, frequencies=frequencies)


def kl_divergence(p: Matrix, q: Matrix) -> float:
    """sum_ij p_ij log(p_ij / q_ij) with the convention 0 log 0 = 0."""
    if p.shape != q.shape:
        raise ShapeMismatchError(f"kl: shapes {p.shape} vs {q.shape}")
    support = p > 0.0
    if np.any(q[support] <= 0.0):
        raise InfiniteDivergenceError("q is zero on the support of p")
    terms = np.zeros_like(p)
    terms[support] = p[support] * np.log(p[support] / q[support])
    return float(terms.sum())


def clustering_grads(
    z: Matrix, centroids: Matrix, target: Matrix, alpha: float = 1.0
) -> tuple[Matrix, Matrix]:
    """Gradients of KL(target || Q(z, centroids)) with the target held fixed.

    Works for any fixed row-stochastic target: the sharpened self-training
    target during clustering, or a frozen reference distribution for the
    consistency loss. Returns (grad_z, grad_centroids) of the summed KL.
    """
    if target.shape != (z.shape[0], centroids.shape[0]):
        raise ShapeMismatchError(
            f"target {target.shape} vs points {z.shape} x centroids {centroids.shape}"
        )
    dists = squared_distances(z, centroids)
    kernels = _kernel(dists, alpha)
    q = kernels / kernels.sum(axis=1, keepdims=True)
    # d KL / d dist_ij = (target_ij - q_ij) (alpha+1) / (2 (alpha + dist_ij)),
    # then d dist / d z_i = 2 (z_i - u_j) and d dist / d u_j = -2 (z_i - u_j).
    w = (alpha + 1.0) * (target - q) / (alpha + dists)
    grad_z = w.sum(axis=1, keepdims=True) * z - w @ centroids
    grad_centroids = w.sum(axis=0)[:, None] * centroids - w.T @ z
    return grad_z, grad_centroids
