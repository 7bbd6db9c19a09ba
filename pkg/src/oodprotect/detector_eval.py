"""Detector evaluation: rejection-class rates and score-based curves.

Convention used throughout: the positive class is IN-distribution. TPR is
therefore measured on in-distribution scores and FPR on OOD scores, and an
augmented classifier's OOD rejection rate is its TNR while its
in-distribution rejection rate is its FNR.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_TPR_TARGET = 0.95

SCORE_CSV_HEADER = "name,auroc,fpr_at_tpr,tpr_target,n_in,n_ood"


@dataclass(frozen=True)
class AugmentedEval:
    """Rates of a K+1-class classifier on one in-dist / OOD pair.

    On in-distribution data acc + rej + err = 1; on OOD data
    ood_err = 1 - ood_rej.
    """

    acc: float
    rej: float
    err: float
    ood_rej: float
    ood_err: float
    n_in: int
    n_ood: int

    def to_json_dict(self) -> dict:
        return {
            "acc": self.acc,
            "rej": self.rej,
            "err": self.err,
            "ood_rej": self.ood_rej,
            "ood_err": self.ood_err,
            "n_in": self.n_in,
            "n_ood": self.n_ood,
        }


@dataclass(frozen=True)
class ScoreEval:
    """AUROC and FPR-at-target-TPR of a score-based detector."""

    auroc: float
    fpr_at_tpr: float
    tpr_target: float
    n_in: int
    n_ood: int

    def to_json_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "fpr_at_tpr": self.fpr_at_tpr,
            "tpr_target": self.tpr_target,
            "n_in": self.n_in,
            "n_ood": self.n_ood,
        }

    def to_csv_row(self, name: str) -> str:
        return (
            f"{name},{self.auroc!r},{self.fpr_at_tpr!r},{self.tpr_target!r},"
            f"{self.n_in},{self.n_ood}"
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def augmented_eval(in_predictions, in_labels, ood_predictions, num_classes: int) -> AugmentedEval:
    """Rates for predictions over K+1 classes, class K being rejection.

    err is defined as the remainder 1 - acc - rej so the in-distribution
    identity holds exactly; likewise ood_err = 1 - ood_rej.
    """
    in_predictions = np.asarray(in_predictions)
    in_labels = np.asarray(in_labels)
    ood_predictions = np.asarray(ood_predictions)
    if in_predictions.shape != in_labels.shape or in_predictions.size == 0:
        raise ValueError("in_predictions and in_labels must be equal-length and nonempty")
    if ood_predictions.size == 0:
        raise ValueError("ood_predictions must be nonempty")
    if in_labels.size and (in_labels.min() < 0 or in_labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    acc = float(np.mean(in_predictions == in_labels))
    rej = float(np.mean(in_predictions == num_classes))
    ood_rej = float(np.mean(ood_predictions == num_classes))
    return AugmentedEval(
        acc=acc,
        rej=rej,
        err=1.0 - acc - rej,
        ood_rej=ood_rej,
        ood_err=1.0 - ood_rej,
        n_in=in_predictions.size,
        n_ood=ood_predictions.size,
    )


def _check_scores(in_scores, ood_scores):
    in_scores = np.asarray(in_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if in_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("score arrays must be nonempty")
    if np.isnan(in_scores).any() or np.isnan(ood_scores).any():
        raise ValueError("scores must not contain NaN")
    return in_scores, ood_scores


def auroc(in_scores, ood_scores) -> float:
    """Probability a random in-dist score exceeds a random OOD score.

    Higher score means more in-distribution. Ties count one half. Computed
    from the rank statistic: with average ranks over the pooled sample the
    sum of in-distribution ranks R gives U = R - n(n+1)/2, which equals the
    pairwise win count exactly (halves included), so U / (n*m) matches the
    brute-force pairwise comparison bit for bit.
    """
    in_scores, ood_scores = _check_scores(in_scores, ood_scores)
    n, m = in_scores.size, ood_scores.size
    pooled = np.concatenate([in_scores, ood_scores])
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(n + m, dtype=np.float64)
    sorted_scores = pooled[order]
    # average ranks within tie groups
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0.0) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [n + m]])
    for a, b in zip(starts, stops):
        ranks[order[a:b]] = 0.5 * (a + b + 1)  # mean of 1-based ranks a+1..b
    u = ranks[:n].sum() - n * (n + 1) / 2.0
    return float(u / (n * m))


def fpr_at_tpr(in_scores, ood_scores, tpr_target: float = DEFAULT_TPR_TARGET) -> float:
    """OOD false-positive rate at the stated in-distribution TPR.

    The threshold is the largest observed score t with
    fraction(in_scores >= t) >= tpr_target; the result is
    fraction(ood_scores >= t). Thresholds are only ever the distinct
    observed scores (plus infinity, which never qualifies for a positive
    target), with no interpolation.
    """
    in_scores, ood_scores = _check_scores(in_scores, ood_scores)
    if not (0.0 < tpr_target <= 1.0):
        raise ValueError("tpr_target must lie in (0, 1]")
    thresholds = np.unique(np.concatenate([in_scores, ood_scores]))[::-1]
    in_sorted = np.sort(in_scores)
    n = in_scores.size
    tpr = (n - np.searchsorted(in_sorted, thresholds, side="left")) / n
    qualifying = np.flatnonzero(tpr >= tpr_target)
    t = thresholds[qualifying[0]]  # first hit in descending order = largest t
    return float(np.mean(ood_scores >= t))


def score_eval(in_scores, ood_scores, tpr_target: float = DEFAULT_TPR_TARGET) -> ScoreEval:
    """Bundle AUROC and FPR@TPR for one detector."""
    in_arr, ood_arr = _check_scores(in_scores, ood_scores)
    return ScoreEval(
        auroc=auroc(in_arr, ood_arr),
        fpr_at_tpr=fpr_at_tpr(in_arr, ood_arr, tpr_target),
        tpr_target=tpr_target,
        n_in=in_arr.size,
        n_ood=ood_arr.size,
    )
