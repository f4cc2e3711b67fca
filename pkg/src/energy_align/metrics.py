"""Accuracy, confusion matrices, shot splits and the energy-bias diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError


@dataclass(frozen=True)
class ShotThresholds:
    """More than ``many`` training samples is Many-shot, fewer than ``few`` is Few-shot."""

    many: int = 100
    few: int = 20


def _predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)  # first maximum: lower class index wins ties


def topk_accuracy(logits, labels, k: int = 1) -> float:
    """Percentage of rows whose label is among the ``k`` largest logits.

    Ties in logit value rank the lower class index higher.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[0] != y.shape[0] or z.shape[0] == 0:
        raise ContractError("need a non-empty (N, C) logit batch with N labels")
    if not 1 <= k <= z.shape[1]:
        raise ContractError(f"k must be in [1, {z.shape[1]}]")
    true = z[np.arange(z.shape[0]), y][:, None]
    cols = np.arange(z.shape[1])[None, :]
    ahead = (z > true) | ((z == true) & (cols < y[:, None]))
    rank = ahead.sum(axis=1)
    return 100.0 * float(np.mean(rank < k))


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (y, p), 1)
    return out


def log_confusion(matrix) -> np.ndarray:
    return np.log1p(np.asarray(matrix, dtype=np.float64))


def per_class_accuracy(confusion) -> np.ndarray:
    cm = np.asarray(confusion, dtype=np.float64)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return 100.0 * np.diag(cm) / support


def split_of(counts, thresholds: ShotThresholds = ShotThresholds()) -> np.ndarray:
    counts = np.asarray(counts)
    return np.where(counts > thresholds.many, "many", np.where(counts < thresholds.few, "few", "medium"))


def split_accuracies(class_acc, counts, thresholds: ShotThresholds = ShotThresholds()) -> dict:
    """Macro accuracy over Many/Medium/Few buckets; empty buckets are omitted."""
    acc = np.asarray(class_acc, dtype=np.float64)
    buckets = split_of(counts, thresholds)
    out = {"overall": float(acc.mean())}
    for name in ("many", "medium", "few"):
        sel = buckets == name
        if sel.any():
            out[name] = float(acc[sel].mean())
    return out


def avg_incremental(step_accuracies) -> float | None:
    """Mean accuracy over every step but the first; ``None`` for a single step."""
    acc = list(step_accuracies)
    if len(acc) < 2:
        return None
    return float(np.mean(acc[1:]))


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    ra = rankdata(a)
    rb = rankdata(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0:
        return float("nan")
    return float((ra * rb).sum() / denom)


def energy_bias_diagnostic(counts, nfe_before, nfe_after=None) -> dict:
    counts = np.asarray(counts)
    before = np.asarray(nfe_before, dtype=np.float64)
    out = {
        "spearman_before": spearman(counts, before),
        "table": [
            {"class": int(c), "count": int(n), "neg_free_energy_before": float(e)}
            for c, (n, e) in enumerate(zip(counts, before))
        ],
    }
    if nfe_after is not None:
        after = np.asarray(nfe_after, dtype=np.float64)
        out["spearman_after"] = spearman(counts, after)
        for row, e in zip(out["table"], after):
            row["neg_free_energy_after"] = float(e)
    return out


def evaluate(logits, labels, num_classes: int, counts=None, thresholds: ShotThresholds = ShotThresholds(), k: int = 5) -> dict:
    """Bundle of every accuracy figure for one logit batch (percentages)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    cm = confusion_matrix(_predict(z), y, num_classes)
    class_acc = per_class_accuracy(cm)
    present = ~np.isnan(class_acc)
    k = min(k, num_classes)
    report = {
        "top1": topk_accuracy(z, y, 1),
        f"top{k}": topk_accuracy(z, y, k),
        "macro": float(np.mean(class_acc[present])),
        "per_class": [None if np.isnan(a) else float(a) for a in class_acc],
        "confusion": cm.tolist(),
    }
    if counts is not None:
        report["splits"] = split_accuracies(class_acc[present], np.asarray(counts)[present], thresholds)
    return report


def old_to_new_mass(logits, labels, old_classes: int) -> float:
    """Fraction of old-class samples (labels < ``old_classes``) predicted as a new class."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    old = y < old_classes
    if not old.any():
        return 0.0
    return float(np.mean(_predict(z[old]) >= old_classes))
