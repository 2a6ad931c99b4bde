"""Classification metrics: accuracy, weighted F1, ROC-AUC.

Implemented from scratch so the test suite can check them against
brute-force pairwise oracles. AUC uses the rank-statistic form with tie
correction (midranks); multi-class AUC is macro one-vs-rest. F1 for a
class with no true and no predicted positives is defined as 0.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _check_lengths(y_true, y_pred_or_scores):
    y_true = np.asarray(y_true)
    other = np.asarray(y_pred_or_scores)
    if y_true.ndim != 1 or y_true.shape[0] < 1:
        raise ValidationError("y_true must be a non-empty 1-D sequence")
    if other.shape[0] != y_true.shape[0]:
        raise ValidationError(
            f"length mismatch: {y_true.shape[0]} labels vs {other.shape[0]} rows"
        )
    return y_true, other


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = _check_lengths(y_true, y_pred)
    return float(np.mean(y_true == y_pred))


def weighted_f1(y_true, y_pred) -> float:
    """Per-class F1 averaged with true-class support weights."""
    y_true, y_pred = _check_lengths(y_true, y_pred)
    total = 0.0
    n = y_true.shape[0]
    for cls in np.unique(y_true):
        support = int(np.sum(y_true == cls))
        tp = int(np.sum((y_true == cls) & (y_pred == cls)))
        fp = int(np.sum((y_true != cls) & (y_pred == cls)))
        fn = support - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom > 0 else 0.0
        total += support * f1
    return total / n


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def binary_auc(y_true, scores) -> float:
    """ROC-AUC for binary labels via the Mann-Whitney rank statistic."""
    y_true, scores = _check_lengths(y_true, np.asarray(scores, dtype=np.float64))
    pos = y_true == 1
    n_pos = int(pos.sum())
    n_neg = int(len(y_true) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC undefined: only one class present")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(y_true, scores) -> float:
    """ROC-AUC from per-class probability rows.

    Binary inputs reduce to the standard ROC-AUC of the positive-class
    score; with more classes this is the macro average of each
    class-vs-rest AUC.
    """
    y_true, scores = _check_lengths(y_true, np.asarray(scores, dtype=np.float64))
    if scores.ndim == 1:
        return binary_auc((y_true == np.max(y_true)).astype(int), scores)
    if scores.ndim != 2:
        raise ValidationError("scores must be a vector or per-class probability rows")
    row_sums = scores.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(scores < -1e-12):
        raise ValidationError("score rows must lie on the probability simplex")
    classes = np.unique(y_true)
    if len(classes) < 2:
        raise ValidationError("AUC undefined: only one class present")
    if len(classes) == 2 and scores.shape[1] == 2:
        return binary_auc((y_true == classes[1]).astype(int), scores[:, int(classes[1])])
    per_class = [
        binary_auc((y_true == cls).astype(int), scores[:, int(cls)]) for cls in classes
    ]
    return float(np.mean(per_class))


def summarize_seeds(per_seed: list[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Mean and std of each metric over repeated-seed runs."""
    if not per_seed:
        raise ValidationError("no per-seed results to summarize")
    keys = sorted(per_seed[0])
    out = {}
    for key in keys:
        vals = np.array([run[key] for run in per_seed], dtype=np.float64)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
