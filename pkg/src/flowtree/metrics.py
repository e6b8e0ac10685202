"""Confusion matrices, accuracy and class-averaged precision."""
from __future__ import annotations

import csv
from typing import Sequence

import numpy as np


class LengthMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class EmptyMatrix(ValueError):
    pass


def confusion(preds: Sequence[int], truths: Sequence[int], k: int) -> np.ndarray:
    """counts[true, predicted]."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise LengthMismatch(f"{preds.shape[0]} predictions vs {truths.shape[0]} labels")
    for a in (preds, truths):
        if a.size and (a.min() < 0 or a.max() >= k):
            raise LabelOutOfRange(f"labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


def _check(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.sum() <= 0:
        raise EmptyMatrix("confusion matrix has no samples")
    return cm


def accuracy(cm: np.ndarray) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def per_class_precision(cm: np.ndarray) -> np.ndarray:
    """TP / (TP + FP) per class; 0 for classes that were never predicted."""
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    return np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    return np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)


def average_precision(cm: np.ndarray) -> float:
    """Unweighted mean of per-class precision; never-predicted classes count as 0."""
    cm = _check(cm)
    return float(per_class_precision(cm).mean())


def report(cm: np.ndarray, class_names: Sequence[str], experiment: str, seed: int, **extra) -> dict:
    prec = per_class_precision(cm)
    rec = per_class_recall(cm)
    support = np.asarray(cm).sum(axis=1)
    return {
        "experiment": experiment,
        "seed": seed,
        "accuracy": accuracy(cm),
        "avg_precision": average_precision(cm),
        "per_class": {
            name: {"precision": float(p), "recall": float(r), "support": int(s)}
            for name, p, r, s in zip(class_names, prec, rec, support)
        },
        "matrix": np.asarray(cm).tolist(),
        **extra,
    }


def write_matrix_csv(path, cm: np.ndarray, class_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, np.asarray(cm)):
            w.writerow([name, *[int(v) for v in row]])
