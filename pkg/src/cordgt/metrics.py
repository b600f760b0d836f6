"""Ranking metrics for binary link prediction."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be non-empty and aligned")
    if labels.all() or not labels.any():
        raise ValueError("need both positive and negative labels")
    return scores, labels


def average_precision(scores, labels) -> float:
    """Mean of precision@k over the ranks k of the positives (score-descending).

    Tied scores are resolved as one threshold: every positive in a tie group
    gets the precision measured at the end of the group.
    """
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    prec_end = tp[ends] / (ends + 1)
    pos_in_group = np.diff(np.r_[0, tp[ends]])
    return float((prec_end * pos_in_group).sum() / y.sum())


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) with ties counted as one half (Mann-Whitney U)."""
    scores, labels = _check(scores, labels)
    r = rankdata(scores, method="average")
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    u = r[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
