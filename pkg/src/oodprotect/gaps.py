"""Generalization-gap objective for selecting an OOD training set.

Given an augmented classifier trained on one candidate OOD set, the
objective accumulates the absolute train-validation gap on the
in-distribution task plus a weighted sum of gaps between the seen OOD
training loss and the validation losses over every candidate out
distribution. The candidate whose trained classifier minimizes this
objective is the proper one. Losses here are 0-1 misclassification rates;
this module never trains anything itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_LAMBDA = 1.0


@dataclass(frozen=True)
class LossRecord:
    """Empirical 0-1 losses of one augmented classifier.

    per_out_val_losses maps each candidate OOD set's name to the
    classifier's 0-1 OOD loss on that set's validation split.
    """

    in_train_loss: float
    in_val_loss: float
    ood_train_loss: float
    per_out_val_losses: dict[str, float]

    def __post_init__(self):
        values = [self.in_train_loss, self.in_val_loss, self.ood_train_loss]
        values += list(self.per_out_val_losses.values())
        for v in values:
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"losses are 0-1 rates, got {v}")


@dataclass(frozen=True)
class GapScore:
    """Accumulated generalization gaps and the resulting objective."""

    in_gap: float
    ood_gap_sum: float
    lam: float
    objective: float
    num_out_sets: int

    def __post_init__(self):
        expected = self.in_gap + self.lam * self.ood_gap_sum
        if self.objective != expected:
            raise ValueError("objective must equal in_gap + lam * ood_gap_sum")

    def to_json_dict(self) -> dict:
        return {
            "in_gap": self.in_gap,
            "ood_gap_sum": self.ood_gap_sum,
            "lambda": self.lam,
            "objective": self.objective,
            "num_out_sets": self.num_out_sets,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def zero_one_in_loss(predictions, labels) -> float:
    """Fraction of in-distribution samples not predicted as their label.

    Predictions may range over K+1 classes; sending an in-distribution
    sample to the rejection class counts as a loss like any other miss.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must be equal-length and nonempty")
    return float(np.mean(predictions != labels))


def zero_one_ood_loss(predictions, rejection_class: int) -> float:
    """Fraction of OOD samples not assigned to the rejection class."""
    predictions = np.asarray(predictions)
    if predictions.size == 0:
        raise ValueError("predictions must be nonempty")
    return float(np.mean(predictions != rejection_class))


def gap_score(
    record: LossRecord,
    lam: float = DEFAULT_LAMBDA,
    aggregation: str = "sum",
    exclude: str | None = None,
) -> GapScore:
    """Score one classifier's LossRecord.

    aggregation "sum" adds the per-out-distribution gaps; "sup" keeps only
    the largest one. exclude drops the named (seen) OOD set from the
    aggregation; by default every set, seen included, contributes.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    losses = {
        name: v for name, v in record.per_out_val_losses.items() if name != exclude
    }
    if not losses:
        raise ValueError("no out-distribution validation losses to aggregate")
    gaps = [abs(record.ood_train_loss - v) for v in losses.values()]
    if aggregation == "sum":
        ood_gap = sum(gaps)
    elif aggregation == "sup":
        ood_gap = max(gaps)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    in_gap = abs(record.in_train_loss - record.in_val_loss)
    return GapScore(
        in_gap=in_gap,
        ood_gap_sum=ood_gap,
        lam=lam,
        objective=in_gap + lam * ood_gap,
        num_out_sets=len(losses),
    )


def select_proper_ood(scores: dict[str, GapScore]) -> str:
    """Name of the candidate with the smallest objective, ties by name."""
    if not scores:
        raise ValueError("scores must be nonempty")
    return min(scores.items(), key=lambda item: (item[1].objective, item[0]))[0]
