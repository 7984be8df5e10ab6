"""Confusion-matrix metrics for imbalanced evaluation."""

from __future__ import annotations

import numpy as np


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def _check(cm):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    if cm.sum() == 0:
        raise ValueError("empty confusion matrix")
    return cm


def accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


def per_class_recall(cm) -> np.ndarray:
    cm = _check(cm)
    return _ratio(np.diag(cm).astype(float), cm.sum(axis=1).astype(float))


def per_class_f1(cm):
    """Per-class F1 and the classes with neither true nor predicted samples.

    Zero denominators give zero precision / recall / F1.
    """
    cm = _check(cm)
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0).astype(float)
    true = cm.sum(axis=1).astype(float)
    precision = _ratio(tp, pred)
    recall = _ratio(tp, true)
    f1 = _ratio(2 * precision * recall, precision + recall)
    absent = [int(c) for c in np.flatnonzero((pred == 0) & (true == 0))]
    return f1, absent


def macro_f1(cm) -> float:
    f1, _ = per_class_f1(cm)
    return float(f1.mean())


def imbalance_ratio(data) -> float:
    """N_max / N_min from a dataset (anything with ``class_counts``) or a count list."""
    counts = np.asarray(getattr(data, "class_counts", data))
    if counts.size == 0 or np.any(counts <= 0):
        raise ValueError("every class needs at least one sample")
    return float(counts.max() / counts.min())


def summarize(y_true, y_pred, num_classes: int) -> dict:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    return {
        "accuracy": accuracy(cm),
        "macro_f1": macro_f1(cm),
        "per_class_recall": per_class_recall(cm).tolist(),
    }
