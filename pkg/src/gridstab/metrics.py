"""Ranking metrics and fold assignment for binary risk scores."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateFold, NoPositives, OneClassOnly


def _oriented(scores, higher_is_riskier: bool) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    return s if higher_is_riskier else -s


def _sweep(scores, labels, higher_is_riskier: bool = True):
    """Cumulative counts at each distinct threshold, from the strictest down.

    Returns ``(thresholds, tp, fp)``; a sample is flagged when its oriented score
    is ``>=`` the threshold, so equal scores always enter together.
    """
    s = _oriented(scores, higher_is_riskier)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True] if s.size else np.zeros(0, bool)
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1 - y)[last]
    return s[last], tp, fp


def average_precision(scores, labels, higher_is_riskier: bool = True) -> float:
    """``sum_n (R_n - R_{n-1}) P_n`` over the tie-grouped threshold sweep."""
    y = np.asarray(labels)
    n_pos = int(np.sum(y))
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive label")
    _, tp, fp = _sweep(scores, labels, higher_is_riskier)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def pr_curve(scores, labels, higher_is_riskier: bool = True):
    """``(thresholds, precision, recall)``, one entry per distinct score."""
    n_pos = int(np.sum(labels))
    if n_pos == 0:
        raise NoPositives("precision-recall curve needs at least one positive label")
    thr, tp, fp = _sweep(scores, labels, higher_is_riskier)
    return _unorient(thr, higher_is_riskier), tp / (tp + fp), tp / n_pos


def det_curve(scores, labels, higher_is_riskier: bool = True):
    """``(thresholds, fpr, fnr)``, one entry per distinct score; ``fnr`` falls as ``fpr`` rises."""
    y = np.asarray(labels)
    n_pos = int(np.sum(y))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("DET curve needs both classes")
    thr, tp, fp = _sweep(scores, labels, higher_is_riskier)
    return _unorient(thr, higher_is_riskier), fp / n_neg, 1.0 - tp / n_pos


def _unorient(thr, higher_is_riskier):
    return thr if higher_is_riskier else -thr


def stratified_folds(labels, n_folds: int = 4, seed: int = 0) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    y = np.asarray(labels).astype(np.int64)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=np.int64)
    start = 0
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = (start + np.arange(idx.size)) % n_folds
        start += idx.size
    for f in range(n_folds):
        part = y[fold == f]
        if part.size == 0 or part.min() == part.max():
            raise DegenerateFold(f"fold {f} does not contain both classes")
    return fold


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Row indices ``(train, test)`` with class proportions preserved."""
    y = np.asarray(labels).astype(np.int64)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
