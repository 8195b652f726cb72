"""Clustering quality against ground truth: ACC, adjusted Rand index, per-class PRF."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class ContingencyTable:
    counts: np.ndarray  # (n_pred, n_true) int64
    pred_values: np.ndarray  # sorted distinct cluster ids (rows)
    true_values: np.ndarray  # sorted distinct label ids (columns)
    n: int

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def _as_label_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr.astype(np.int64)


def contingency_table(labels, assignments) -> ContingencyTable:
    labels = _as_label_array(labels, "labels")
    assignments = _as_label_array(assignments, "assignments")
    if labels.shape != assignments.shape:
        raise ValueError(
            f"length mismatch: {labels.shape[0]} labels vs {assignments.shape[0]} assignments"
        )
    true_values, true_idx = np.unique(labels, return_inverse=True)
    pred_values, pred_idx = np.unique(assignments, return_inverse=True)
    counts = np.zeros((len(pred_values), len(true_values)), dtype=np.int64)
    np.add.at(counts, (pred_idx, true_idx), 1)
    return ContingencyTable(counts, pred_values, true_values, int(labels.shape[0]))


def accuracy(labels, assignments, max_clusters: int = 10_000):
    """Best-mapping clustering accuracy.

    Maximizes the matched fraction over one-to-one cluster-to-label
    mappings by optimal assignment on the contingency table (padded square
    when cluster and label counts differ). Returns (acc, mapping) where
    mapping sends each cluster id to its matched label id; clusters
    matched to padding are absent from the mapping.
    """
    table = contingency_table(labels, assignments)
    size = max(len(table.pred_values), len(table.true_values))
    if size > max_clusters:
        raise ValueError(f"{size} clusters exceeds the exact-solver cap {max_clusters}")
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.counts.shape[0], : table.counts.shape[1]] = table.counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    matched = int(padded[rows, cols].sum())
    mapping = {
        int(table.pred_values[r]): int(table.true_values[c])
        for r, c in zip(rows, cols)
        if r < len(table.pred_values) and c < len(table.true_values)
    }
    return matched / table.n, mapping


def adjusted_rand_index(labels, assignments) -> float:
    """Pair-counting ARI: (index - expected) / (max - expected).

    Pair counts are combined in exact integer arithmetic with a single
    final division, so rational results (the -0.5 crosswise case) come out
    exact. The degenerate case where max equals expected (e.g. both
    partitions all-singletons) is undefined by the formula; it returns 0
    and emits a warning.
    """
    table = contingency_table(labels, assignments)
    if table.n < 2:
        raise ValueError("ARI needs at least two samples")

    def comb2(values) -> int:
        return sum(int(v) * (int(v) - 1) // 2 for v in values)

    index = comb2(table.counts.ravel())
    sum_rows = comb2(table.row_totals)
    sum_cols = comb2(table.col_totals)
    total_pairs = table.n * (table.n - 1) // 2
    # (index - rows*cols/total) / ((rows+cols)/2 - rows*cols/total), cleared
    # of fractions: both sides scaled by 2*total
    numerator = 2 * total_pairs * index - 2 * sum_rows * sum_cols
    denominator = total_pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols
    if denominator == 0:
        warnings.warn("ARI undefined (max index equals expected); returning 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return numerator / denominator


def per_class_prf(labels, assignments, mapping: dict[int, int], class_id: int):
    """One-vs-rest recall, precision, and F-measure for one true class.

    Predicted positives are the points in clusters that the accuracy
    mapping sends to class_id. A class with no mapped cluster scores zero.
    """
    labels = _as_label_array(labels, "labels")
    assignments = _as_label_array(assignments, "assignments")
    if labels.shape != assignments.shape:
        raise ValueError(
            f"length mismatch: {labels.shape[0]} labels vs {assignments.shape[0]} assignments"
        )
    actual = labels == class_id
    if not actual.any():
        raise ValueError(f"class {class_id} absent from labels")
    mapped_clusters = [c for c, lab in mapping.items() if lab == class_id]
    predicted = np.isin(assignments, mapped_clusters)
    true_pos = int(np.count_nonzero(predicted & actual))
    recall = true_pos / int(np.count_nonzero(actual))
    precision = true_pos / int(np.count_nonzero(predicted)) if predicted.any() else 0.0
    if precision + recall == 0.0:
        f_measure = 0.0
    else:
        f_measure = 2.0 * precision * recall / (precision + recall)
    return recall, precision, f_measure
