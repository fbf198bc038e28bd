"""Rank-based AUROC scoring."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


def binary_auroc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUROC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative rows")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def per_class_auroc(proba: np.ndarray, labels: Sequence, class_set: Sequence) -> dict:
    """One-vs-rest AUROC for each class in ``class_set`` that has positives and negatives."""
    proba = np.asarray(proba, dtype=float)
    labels = np.asarray(labels)
    if proba.ndim == 1:
        proba = np.column_stack([1.0 - proba, proba])
    out = {}
    for j, cls in enumerate(class_set):
        pos = labels == cls
        if pos.all() or not pos.any():
            logger.info("weighted_auroc: class %r has no %s; skipped", cls,
                        "negatives" if pos.all() else "positives")
            continue
        out[cls] = binary_auroc(proba[:, j], pos)
    return out


def weighted_auroc(proba: np.ndarray, labels: Sequence, class_set: Sequence | None = None) -> float:
    """Support-weighted mean of one-vs-rest AUROCs.

    ``proba`` has one column per entry of ``class_set`` (sorted labels by
    default); a 1-D array is read as the positive-class score of a binary task.
    """
    labels = np.asarray(labels)
    if class_set is None:
        class_set = sorted(set(labels.tolist()))
    if len(set(labels.tolist())) < 2:
        raise ValueError("weighted AUROC needs at least 2 classes in labels")
    aucs = per_class_auroc(proba, labels, class_set)
    support = np.array([(labels == c).sum() for c in aucs], dtype=float)
    return float(np.dot(support / support.sum(), list(aucs.values())))


def roc_points(scores: np.ndarray, positive: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) at every distinct score, highest threshold first."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positive[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(p)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / max(p.sum(), 1)]
    fpr = np.r_[0.0, fps / max((~p).sum(), 1)]
    return fpr, tpr, np.r_[np.inf, s[last]]
