"""Ranking and error metrics for value prediction.

All functions are pure.  AUC scores come from the purchase probability
(consumer vs non-consumer discrimination); N-GINI and NMAE use the
predicted expected value.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def nmae(y_true, y_pred):
    """Sum of absolute errors over sum of true values."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    denom = y_true.sum()
    if denom <= 0:
        raise ValueError("degenerate truth: sum of true values is zero")
    return float(np.abs(y_pred - y_true).sum() / denom)


def auc(y_true, scores):
    """Mann-Whitney AUC of 1{y_true > 0} against scores; ties count 1/2."""
    y_true = np.asarray(y_true, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    labels = y_true > 0
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _capture_curve(y, pred):
    """Cumulative true-value capture when sorted by pred descending.

    Tie groups in pred share the averaged per-position gain, which makes
    the curve independent of input permutation.
    """
    order = np.argsort(-pred, kind="stable")
    y_sorted = y[order].astype(np.float64)
    p_sorted = pred[order]
    # replace each tie group's gains with the group mean
    boundaries = np.flatnonzero(np.diff(p_sorted) != 0) + 1
    start = 0
    for end in list(boundaries) + [len(y_sorted)]:
        y_sorted[start:end] = y_sorted[start:end].mean()
        start = end
    return np.cumsum(y_sorted)


def _gini_area(y, pred):
    n = len(y)
    total = y.sum()
    cum = _capture_curve(y, pred) / total
    return float(cum.sum() / n - (n + 1) / (2.0 * n))


def n_gini(y_true, y_pred):
    """Prediction-ordered value-capture Gini, normalized by the oracle's."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.sum() <= 0:
        raise ValueError("degenerate truth: sum of true values is zero")
    g_oracle = _gini_area(y_true, y_true)
    if g_oracle == 0.0:
        raise ValueError("undefined normalizer: all true values equal")
    return _gini_area(y_true, y_pred) / g_oracle


def stability_diff(pred_day1, pred_day2):
    """Relative change of total predicted value between two model versions."""
    p1 = np.asarray(pred_day1, dtype=np.float64)
    p2 = np.asarray(pred_day2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ValueError("prediction vectors must align")
    s1 = p1.sum()
    if s1 <= 0:
        raise ValueError("first-day prediction sum is zero")
    return float(abs(s1 - p2.sum()) / s1)


def evaluate_horizons(y_by_horizon, ev_by_horizon, pbuy_by_horizon):
    """Per-horizon metrics dict for horizons 3/7/30."""
    out = {}
    for t in (3, 7, 30):
        y = y_by_horizon[t]
        out[t] = {
            "nmae": nmae(y, ev_by_horizon[t]),
            "auc": auc(y, pbuy_by_horizon[t]),
            "n_gini": n_gini(y, ev_by_horizon[t]),
        }
    return out
