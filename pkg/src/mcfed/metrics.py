"""Classification metrics per device and their cross-device aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DeviceMetric:
    """Test-set metrics of one device; accuracy/f1 are meaningful only if test_size > 0."""

    device_id: int
    accuracy: float
    f1: float
    test_size: int


def accuracy(preds, labels) -> float:
    """Fraction of exact matches."""
    p = np.asarray(preds, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} preds vs {y.shape[0]} labels")
    if p.shape[0] == 0:
        raise ValueError("cannot score an empty prediction vector")
    return float(np.mean(p == y))


def f1_score(preds, labels, classes: int) -> float:
    """Unweighted mean F1 over the classes present in `labels`.

    A class scores 0 when it is never predicted correctly; classes absent
    from the labels are skipped so devices missing a class are not
    penalized for it.
    """
    p = np.asarray(preds, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} preds vs {y.shape[0]} labels")
    if p.shape[0] == 0:
        raise ValueError("cannot score an empty prediction vector")
    scores = []
    for c in np.unique(y):
        tp = int(np.sum((p == c) & (y == c)))
        fp = int(np.sum((p == c) & (y != c)))
        fn = int(np.sum((p != c) & (y == c)))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def micro_aggregate(values, sizes) -> float:
    """Size-weighted mean of per-device values."""
    v = np.asarray(values, dtype=np.float64).ravel()
    s = np.asarray(sizes, dtype=np.float64).ravel()
    if v.shape != s.shape:
        raise ValueError(f"length mismatch: {v.shape[0]} values vs {s.shape[0]} sizes")
    total = float(np.sum(s))
    if total <= 0.0:
        raise ValueError("total size must be positive")
    return float(np.sum(v * s) / total)


def macro_aggregate(values) -> float:
    """Plain mean of per-device values."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.shape[0] == 0:
        raise ValueError("cannot average an empty vector")
    return float(np.mean(v))


def adjusted_rand_index(assignment, truth) -> float:
    """Chance-corrected agreement between two partitions, invariant to relabeling."""
    a = np.asarray(assignment).ravel()
    b = np.asarray(truth).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n == 0:
        raise ValueError("cannot compare empty partitions")
    if n == 1:
        return 1.0

    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1.0) / 2.0

    index = float(np.sum(comb2(table)))
    row = float(np.sum(comb2(table.sum(axis=1))))
    col = float(np.sum(comb2(table.sum(axis=0))))
    expected = row * col / comb2(n)
    max_index = (row + col) / 2.0
    if max_index == expected:
        # both partitions trivial (all-singletons or one cluster): identical by construction
        return 1.0
    return float((index - expected) / (max_index - expected))
