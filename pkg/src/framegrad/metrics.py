"""F1 computations shared by threshold calibration and the evaluation harness."""

from __future__ import annotations

import numpy as np


def binary_f1(predictions, labels) -> float:
    """2*TP / (2*TP + FP + FN); 0 when the denominator is 0."""
    p = np.asarray(predictions, dtype=bool)
    l = np.asarray(labels, dtype=bool)
    if p.shape != l.shape:
        raise ValueError(f"prediction shape {p.shape} != label shape {l.shape}")
    tp = int((p & l).sum())
    denom = 2 * tp + int((p & ~l).sum()) + int((~p & l).sum())
    return 2.0 * tp / denom if denom else 0.0


def multiclass_f1(predictions, labels, num_classes: int):
    """(per-class one-vs-rest F1 list, micro overall F1 pooled over classes)."""
    p = np.asarray(predictions, dtype=np.int64)
    l = np.asarray(labels, dtype=np.int64)
    per_class = [binary_f1(p == c, l == c) for c in range(num_classes)]
    tp = int((p == l).sum())
    fp = int((p != l).sum())
    micro = 2.0 * tp / (2 * tp + 2 * fp) if p.size else 0.0
    return per_class, micro
