"""Confusion-matrix metrics: per-class precision / sensitivity / specificity
/ accuracy, balanced accuracy, and one-vs-rest ROC-AUC via the rank (Mann-
Whitney) statistic.

Undefined metrics (empty class, never-predicted class) raise rather than
silently returning zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    """A metric's denominator is zero for some class."""


def confusion(truths, preds, num_classes: int) -> np.ndarray:
    """C x C count matrix; entry [i, j] counts true class i predicted j."""
    t = np.asarray(truths, dtype=np.int64)
    p = np.asarray(preds, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or t.max() >= num_classes or p.min() < 0 or p.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def one_vs_rest_counts(cm: np.ndarray, i: int) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) for class i against the rest."""
    tp = int(cm[i, i])
    fn = int(cm[i].sum()) - tp
    fp = int(cm[:, i].sum()) - tp
    tn = int(cm.sum()) - tp - fn - fp
    return tp, fp, fn, tn


def class_metrics(cm: np.ndarray, i: int) -> dict[str, float]:
    tp, fp, fn, tn = one_vs_rest_counts(cm, i)
    if tp + fp == 0:
        raise UndefinedMetricError(f"precision undefined for class {i}: never predicted")
    if tp + fn == 0:
        raise UndefinedMetricError(f"sensitivity undefined for class {i}: class absent")
    if tn + fp == 0:
        raise UndefinedMetricError(f"specificity undefined for class {i}: no negatives")
    return {
        "precision": tp / (tp + fp),
        "sensitivity": tp / (fn + tp),
        "specificity": tn / (tn + fp),
        "accuracy": (tn + tp) / (tn + fp + fn + tp),
    }


def bacc(cm: np.ndarray) -> float:
    """Unweighted mean of per-class sensitivity."""
    sens = []
    for i in range(cm.shape[0]):
        tp = int(cm[i, i])
        row = int(cm[i].sum())
        if row == 0:
            raise UndefinedMetricError(f"balanced accuracy undefined: class {i} absent")
        sens.append(tp / row)
    return float(np.mean(sens))


def roc_auc_ovr(scores: np.ndarray, truths, i: int) -> float:
    """One-vs-rest AUC on the class-i score column, ties counted half."""
    s = np.asarray(scores, dtype=np.float64)[:, i]
    t = np.asarray(truths, dtype=np.int64)
    pos = s[t == i]
    neg = s[t != i]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError(
            f"AUC undefined for class {i}: needs both positives and negatives"
        )
    # Rank-sum formulation: average ranks over the pooled sample.
    pooled = np.concatenate([pos, neg])
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size, dtype=np.float64)
    ranks[order] = np.arange(1, pooled.size + 1)
    # Average tied ranks.
    sorted_vals = pooled[order]
    start = 0
    for end in range(1, pooled.size + 1):
        if end == pooled.size or sorted_vals[end] != sorted_vals[start]:
            ranks[order[start:end]] = 0.5 * (start + 1 + end)
            start = end
    rank_sum = ranks[: pos.size].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def argmax_predictions(scores: np.ndarray) -> np.ndarray:
    """Per-row argmax; ties break toward the lowest class index."""
    return np.asarray(scores).argmax(axis=1)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class metrics plus balanced accuracy and macro averages."""

    class_names: tuple[str, ...]
    per_class: tuple[dict[str, float], ...]
    bacc: float

    @property
    def macro(self) -> dict[str, float]:
        return {
            "avg_auc": float(np.mean([c["auc"] for c in self.per_class])),
            "avg_precision": float(np.mean([c["precision"] for c in self.per_class])),
            "avg_accuracy": float(np.mean([c["accuracy"] for c in self.per_class])),
            "avg_specificity": float(np.mean([c["specificity"] for c in self.per_class])),
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "bacc": self.bacc,
                "macro": self.macro,
                "classes": {
                    name: metrics
                    for name, metrics in zip(self.class_names, self.per_class)
                },
            },
            indent=2,
        )

    def to_csv(self) -> str:
        """Metric rows by diagnosis category, mean value first."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "mean", *self.class_names])
        rows = [
            ("auc", "avg_auc"),
            ("precision", "avg_precision"),
            ("accuracy", "avg_accuracy"),
            ("sensitivity", None),
            ("specificity", "avg_specificity"),
        ]
        for metric, macro_key in rows:
            mean = self.bacc if metric == "sensitivity" else self.macro[macro_key]
            writer.writerow(
                [metric, f"{mean:.6f}"]
                + [f"{c[metric]:.6f}" for c in self.per_class]
            )
        return buf.getvalue()


def full_report(scores: np.ndarray, truths, class_names) -> MetricsReport:
    """Score matrix + truths -> argmax predictions -> complete report."""
    names = tuple(class_names)
    c = len(names)
    preds = argmax_predictions(scores)
    cm = confusion(truths, preds, c)
    per_class = []
    for i in range(c):
        m = class_metrics(cm, i)
        m["auc"] = roc_auc_ovr(scores, truths, i)
        per_class.append(m)
    return MetricsReport(names, tuple(per_class), bacc(cm))
