"""Biometric threshold metrics: AUC, EER and FAR at a fixed FRR.

The accept rule is fixed globally as "accept iff score >= threshold".
AUC uses the rank (Mann-Whitney) formulation with ties counted half;
EER and FAR@FRR interpolate linearly between adjacent ROC operating
points.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError


@dataclass
class ScoredPairs:
    """Parallel score/label lists for one evaluation condition."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise MetricUndefinedError("scores and labels must be equal-length 1-D")
        if self.scores.size < 1:
            raise MetricUndefinedError("need at least one scored pair")

    def require_both_classes(self):
        if not (np.any(self.labels == 1) and np.any(self.labels == 0)):
            raise MetricUndefinedError(
                "threshold metrics need at least one positive and one negative"
            )


def _average_ranks(x):
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(pairs: ScoredPairs) -> float:
    """P(random positive outscores random negative), ties counted half."""
    pairs.require_both_classes()
    pos = pairs.labels == 1
    n_pos = int(pos.sum())
    n_neg = pairs.labels.size - n_pos
    ranks = _average_ranks(pairs.scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _operating_points(pairs: ScoredPairs):
    """(threshold, FAR, FRR) for every distinct score plus the reject-all end."""
    pairs.require_both_classes()
    pos = pairs.scores[pairs.labels == 1]
    neg = pairs.scores[pairs.labels == 0]
    thresholds = np.unique(pairs.scores)
    far = [float(np.mean(neg >= t)) for t in thresholds]
    frr = [float(np.mean(pos < t)) for t in thresholds]
    far.append(0.0)
    frr.append(1.0)
    thresholds = np.append(thresholds, np.inf)
    return thresholds, np.array(far), np.array(frr)


def eer(pairs: ScoredPairs, return_threshold=False):
    """Equal error rate by linear interpolation at the FAR/FRR crossing."""
    thresholds, far, frr = _operating_points(pairs)
    d = far - frr  # decreasing in threshold index
    for i in range(d.size - 1):
        if d[i] >= 0 >= d[i + 1]:
            if d[i] == d[i + 1]:
                value, thr = far[i], thresholds[i]
            else:
                s = d[i] / (d[i] - d[i + 1])
                value = far[i] + s * (far[i + 1] - far[i])
                t1 = thresholds[i + 1] if np.isfinite(thresholds[i + 1]) else thresholds[i]
                thr = thresholds[i] + s * (t1 - thresholds[i])
            return (float(value), float(thr)) if return_threshold else float(value)
    # d starts >= 0 and ends <= 0, so a crossing always exists.
    raise AssertionError("no FAR/FRR crossing found")


def far_at_frr(pairs: ScoredPairs, frr_target=0.10) -> float:
    """FAR linearly interpolated between ROC points bracketing the FRR target."""
    _, far, frr = _operating_points(pairs)
    # Collapse duplicate FRR levels to their best (lowest) FAR.
    best = {}
    for fa, fr in zip(far, frr):
        best[fr] = min(fa, best.get(fr, np.inf))
    levels = np.array(sorted(best))
    fars = np.array([best[fr] for fr in levels])
    if frr_target <= levels[0]:
        return float(fars[0])
    if frr_target >= levels[-1]:
        return float(fars[-1])
    return float(np.interp(frr_target, levels, fars))
