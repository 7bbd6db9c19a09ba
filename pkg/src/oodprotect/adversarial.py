"""Black-box fast-gradient-sign adversaries and the noise-sweep analysis.

Adversaries are generated from a surrogate network (not the network under
evaluation) by one signed gradient step of magnitude alpha, clipped to a
per-coordinate input box. The sweep evaluates a vanilla victim and an
augmented victim across increasing alpha and tracks how far the adversaries
drift from the in-distribution feature-space regions (their coverage
distance), which explains when the augmented victim starts rejecting them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet
from .knn import build_knn_graph
from .metrics import DEFAULT_K, coverage_distance
from .toynet import Mlp, ToyDataset, input_gradients, penultimate_features, predict_classes

SWEEP_CSV_HEADER = "alpha,vanilla_err,aug_err,aug_rej,cd"


def default_input_box(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate clipping box: data range widened by three std deviations."""
    points = np.asarray(points, dtype=np.float64)
    sigma = points.std(axis=0)
    return points.min(axis=0) - 3.0 * sigma, points.max(axis=0) + 3.0 * sigma


@dataclass(frozen=True)
class FgsBatch:
    """One batch of adversaries with its generation parameters."""

    originals: np.ndarray
    perturbed: np.ndarray
    alpha: float
    surrogate_id: str

    def __post_init__(self):
        if self.originals.shape != self.perturbed.shape:
            raise ValueError("originals and perturbed must have matching shapes")
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")
        gap = np.abs(self.perturbed - self.originals).max(initial=0.0)
        if gap > self.alpha + 1e-12:
            raise ValueError(f"perturbation {gap} exceeds alpha {self.alpha}")
        for arr in (self.originals, self.perturbed):
            arr.setflags(write=False)


def fgs_attack(
    surrogate: Mlp,
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    input_box: tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    """x + alpha * sign(grad_x cross-entropy), clipped to the input box.

    sign(0) is 0, so coordinates with a flat loss are left alone.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        y = np.atleast_1d(y)
    lo = np.broadcast_to(np.asarray(input_box[0], dtype=np.float64), x.shape[1:])
    hi = np.broadcast_to(np.asarray(input_box[1], dtype=np.float64), x.shape[1:])
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("inputs must lie inside the input box")
    grad = input_gradients(surrogate, x, y)
    perturbed = np.clip(x + alpha * np.sign(grad), lo, hi)
    return perturbed[0] if single else perturbed


def fgs_batch(
    surrogate: Mlp,
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    input_box: tuple[np.ndarray, np.ndarray],
    surrogate_id: str = "surrogate",
) -> FgsBatch:
    perturbed = fgs_attack(surrogate, x, y, alpha, input_box)
    return FgsBatch(
        originals=np.asarray(x, dtype=np.float64).copy(),
        perturbed=perturbed,
        alpha=alpha,
        surrogate_id=surrogate_id,
    )


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    vanilla_err: float
    aug_err: float
    aug_rej: float
    cd: float

    def to_csv_row(self) -> str:
        return (
            f"{self.alpha!r},{self.vanilla_err!r},{self.aug_err!r},"
            f"{self.aug_rej!r},{self.cd!r}"
        )


@dataclass(frozen=True)
class SweepReport:
    rows: tuple
    k: int
    train_ood_cd: float | None
    surrogate_id: str

    def to_csv(self) -> str:
        return "\n".join([SWEEP_CSV_HEADER] + [r.to_csv_row() for r in self.rows]) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _augmented_rates(net: Mlp, points: np.ndarray, labels: np.ndarray):
    rejection = net.out_dim - 1
    preds = predict_classes(net, points)
    n = preds.size
    n_acc = int(np.count_nonzero(preds == labels))
    n_rej = int(np.count_nonzero(preds == rejection))
    return (n - n_acc - n_rej) / n, n_rej / n


def _embedding_set(net: Mlp, points: np.ndarray, name: str, num_classes: int) -> EmbeddingSet:
    feats = penultimate_features(net, points).astype(np.float32)
    return EmbeddingSet(name=name, vectors=feats, num_classes=num_classes)


def adversary_sweep(
    surrogate: Mlp,
    victim_vanilla: Mlp,
    victim_augmented: Mlp,
    dataset: ToyDataset,
    alphas,
    k: int = DEFAULT_K,
    input_box: tuple[np.ndarray, np.ndarray] | None = None,
    train_ood_points: np.ndarray | None = None,
    surrogate_id: str = "surrogate",
) -> SweepReport:
    """Attack the dataset at each alpha and evaluate both victims.

    The coverage distance of each adversary batch is measured in the
    vanilla victim's penultimate feature space against the clean dataset.
    When the augmented victim's OOD training points are supplied, their
    coverage distance is reported too, marking where rejection should kick
    in. The alpha = 0 row is exactly the clean-data evaluation.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alphas must be nonempty")
    if sorted(alphas) != alphas:
        raise ValueError("alphas must be sorted ascending")
    if surrogate is victim_vanilla or surrogate is victim_augmented:
        raise ValueError("the surrogate must differ from the victims (black-box setting)")
    if input_box is None:
        input_box = default_input_box(dataset.points)

    in_embed = _embedding_set(
        victim_vanilla, dataset.points, "in-dist", dataset.num_classes
    )

    def cd_of(points: np.ndarray, name: str) -> float:
        probe = _embedding_set(victim_vanilla, points, name, dataset.num_classes)
        return coverage_distance(build_knn_graph(in_embed, probe, k))

    rows = []
    for alpha in alphas:
        batch = fgs_batch(
            surrogate, dataset.points, dataset.labels, alpha, input_box, surrogate_id
        )
        vanilla_preds = predict_classes(victim_vanilla, batch.perturbed)
        vanilla_err = float(np.mean(vanilla_preds != dataset.labels))
        aug_err, aug_rej = _augmented_rates(victim_augmented, batch.perturbed, dataset.labels)
        rows.append(
            SweepRow(
                alpha=alpha,
                vanilla_err=vanilla_err,
                aug_err=aug_err,
                aug_rej=aug_rej,
                cd=cd_of(batch.perturbed, f"adversaries-{alpha}"),
            )
        )

    train_cd = None
    if train_ood_points is not None:
        train_cd = cd_of(np.asarray(train_ood_points, dtype=np.float64), "train-ood")
    return SweepReport(
        rows=tuple(rows), k=k, train_ood_cd=train_cd, surrogate_id=surrogate_id
    )
