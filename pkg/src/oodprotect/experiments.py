"""Desk-scale experiments tying the pipeline together.

Three experiments are bundled:

* two_moon: contrast a vanilla MLP with augmented MLPs trained on a
  protective (ring) versus a partially-protective (collapsed blob) OOD set,
  probing all of them with far-away points.
* ranking: on a Gaussian-cluster task, rank four synthetic OOD candidates
  by the coverage metrics and independently by how well an augmented MLP
  trained on each generalizes to the unseen candidates, then compare.
* fgs: sweep fast-gradient-sign adversaries over increasing noise and watch
  the vanilla victim break down while the ring-trained augmented victim
  starts rejecting, explained by the adversaries' growing coverage distance.

Every experiment derives all of its randomness from one 64-bit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversarial import SweepReport, adversary_sweep, default_input_box
from .embeddings import EmbeddingSet, equalize_sizes
from .gaps import GapScore, LossRecord, gap_score, select_proper_ood, zero_one_in_loss, zero_one_ood_loss
from .metrics import DEFAULT_EPSILON_REL, DEFAULT_K, MetricReport, metric_report, rank_candidates
from .rng import derive_seeds
from .toynet import (
    Mlp,
    ToyDataset,
    TrainConfig,
    init_mlp,
    make_dataset,
    make_ood_candidate,
    max_softmax,
    penultimate_features,
    predict_classes,
    train,
)

RANKING_OOD_KINDS = ("ring", "uniform_box", "collapsed_blob", "noise_cloud")
DEFAULT_HIDDEN = (32, 32)
DEFAULT_FGS_ALPHAS = (0.0, 0.1, 0.25, 0.45, 0.7, 0.9, 1.1)


def far_probe_points(
    dataset: ToyDataset, count: int, seed: int, distance_factor: float = 4.0
) -> np.ndarray:
    """Points on a circle well outside the data, for overconfidence probing."""
    rng = np.random.default_rng(seed)
    centroid = dataset.points.mean(axis=0)
    radius = distance_factor * float(
        np.linalg.norm(dataset.points - centroid, axis=1).max()
    )
    if dataset.dim == 2:
        theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
        offsets = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        offsets = rng.normal(size=(count, dataset.dim))
        offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    return centroid + radius * offsets


def spearman_rank_correlation(order_a: list[str], order_b: list[str]) -> float:
    """Spearman rho between two orderings of the same items (no ties)."""
    if sorted(order_a) != sorted(order_b):
        raise ValueError("orderings must contain the same items")
    n = len(order_a)
    if n < 2:
        return 1.0
    pos_b = {name: i for i, name in enumerate(order_b)}
    d2 = sum((i - pos_b[name]) ** 2 for i, name in enumerate(order_a))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def embed_with_predictions(
    net: Mlp, points: np.ndarray, name: str, num_classes: int, labels=None
) -> EmbeddingSet:
    """Penultimate features plus the net's predicted classes, as an EmbeddingSet."""
    feats = penultimate_features(net, points).astype(np.float32)
    preds = predict_classes(net, points)
    return EmbeddingSet(
        name=name,
        vectors=feats,
        num_classes=num_classes,
        labels=labels,
        predicted=preds,
    )


@dataclass(frozen=True)
class TwoMoonResult:
    seed: int
    data: ToyDataset
    ring_points: np.ndarray
    blob_points: np.ndarray
    probes: np.ndarray
    vanilla_net: Mlp
    ring_net: Mlp
    blob_net: Mlp
    vanilla_mean_max_softmax: float
    vanilla_probe_preds: np.ndarray
    vanilla_probe_conf: np.ndarray
    ring_probe_rejection: float
    blob_probe_rejection: float
    ring_probe_preds: np.ndarray
    blob_probe_preds: np.ndarray

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "n_train": len(self.data),
            "n_probes": int(self.probes.shape[0]),
            "vanilla_mean_max_softmax": self.vanilla_mean_max_softmax,
            "ring_probe_rejection": self.ring_probe_rejection,
            "blob_probe_rejection": self.blob_probe_rejection,
            "rejection_gap": self.ring_probe_rejection - self.blob_probe_rejection,
        }


def run_two_moon_experiment(
    seed: int,
    n: int = 400,
    noise: float = 0.08,
    m_ood: int = 400,
    probe_count: int = 50,
    epochs: int = 300,
    hidden=DEFAULT_HIDDEN,
    margin: float = 0.4,
) -> TwoMoonResult:
    seeds = derive_seeds(seed, 7)
    data = make_dataset("two_moons", n, noise, seeds[0])
    ring = make_ood_candidate("ring", data, m_ood, seeds[1], margin=margin)
    blob = make_ood_candidate("collapsed_blob", data, m_ood, seeds[2], margin=margin)
    probes = far_probe_points(data, probe_count, seeds[3])

    dims_vanilla = [data.dim, *hidden, data.num_classes]
    dims_aug = [data.dim, *hidden, data.num_classes + 1]
    vanilla = train(
        init_mlp(dims_vanilla, seeds[4]),
        data,
        None,
        TrainConfig(epochs=epochs, seed=seeds[4], mode="vanilla"),
    ).net
    ring_net = train(
        init_mlp(dims_aug, seeds[5]),
        data,
        ring,
        TrainConfig(epochs=epochs, seed=seeds[5], mode="augmented"),
    ).net
    blob_net = train(
        init_mlp(dims_aug, seeds[6]),
        data,
        blob,
        TrainConfig(epochs=epochs, seed=seeds[6], mode="augmented"),
    ).net

    rejection = data.num_classes
    vanilla_conf = max_softmax(vanilla, probes)
    ring_preds = predict_classes(ring_net, probes)
    blob_preds = predict_classes(blob_net, probes)
    return TwoMoonResult(
        seed=seed,
        data=data,
        ring_points=ring,
        blob_points=blob,
        probes=probes,
        vanilla_net=vanilla,
        ring_net=ring_net,
        blob_net=blob_net,
        vanilla_mean_max_softmax=float(vanilla_conf.mean()),
        vanilla_probe_preds=predict_classes(vanilla, probes),
        vanilla_probe_conf=vanilla_conf,
        ring_probe_rejection=float(np.mean(ring_preds == rejection)),
        blob_probe_rejection=float(np.mean(blob_preds == rejection)),
        ring_probe_preds=ring_preds,
        blob_probe_preds=blob_preds,
    )


@dataclass(frozen=True)
class CandidateOutcome:
    name: str
    report: MetricReport
    record: LossRecord
    gap: GapScore
    mean_unseen_rejection: float


@dataclass(frozen=True)
class RankingResult:
    seed: int
    data: ToyDataset
    reports: tuple
    ranked: tuple
    outcomes: dict
    metric_order: tuple
    oracle_order: tuple
    gap_winner: str

    @property
    def metric_winner(self) -> str:
        return self.metric_order[0]

    @property
    def oracle_winner(self) -> str:
        return self.oracle_order[0]

    @property
    def top_agreement(self) -> bool:
        return self.metric_winner == self.oracle_winner

    @property
    def spearman(self) -> float:
        return spearman_rank_correlation(list(self.metric_order), list(self.oracle_order))

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "metric_order": list(self.metric_order),
            "oracle_order": list(self.oracle_order),
            "metric_winner": self.metric_winner,
            "oracle_winner": self.oracle_winner,
            "gap_winner": self.gap_winner,
            "top_agreement": self.top_agreement,
            "spearman": self.spearman,
            "mean_unseen_rejection": {
                name: o.mean_unseen_rejection for name, o in self.outcomes.items()
            },
            "gap_objective": {
                name: o.gap.objective for name, o in self.outcomes.items()
            },
        }


def run_ranking_experiment(
    seed: int,
    n: int = 600,
    noise: float = 0.3,
    num_classes: int = 6,
    m_ood: int = 600,
    epochs: int = 250,
    k: int = DEFAULT_K,
    epsilon_rel: float = DEFAULT_EPSILON_REL,
    lam: float = 1.0,
    hidden=DEFAULT_HIDDEN,
    margin: float = 0.9,
) -> RankingResult:
    """Metric ranking versus the train-one-classifier-per-candidate oracle."""
    kinds = RANKING_OOD_KINDS
    seeds = derive_seeds(seed, 4 + 3 * len(kinds))
    data = make_dataset("gaussian_clusters", n, noise, seeds[0], num_classes=num_classes)
    val_in = make_dataset("gaussian_clusters", n, noise, seeds[1], num_classes=num_classes)
    vanilla = train(
        init_mlp([data.dim, *hidden, num_classes], seeds[2]),
        data,
        None,
        TrainConfig(epochs=epochs, seed=seeds[2], mode="vanilla"),
    ).net

    train_points, val_points = {}, {}
    for i, kind in enumerate(kinds):
        train_points[kind] = make_ood_candidate(kind, data, m_ood, seeds[4 + 3 * i], margin=margin)
        val_points[kind] = make_ood_candidate(kind, data, m_ood, seeds[5 + 3 * i], margin=margin)

    in_embed = embed_with_predictions(vanilla, data.points, "in-dist", num_classes, data.labels)
    candidate_sets = [
        embed_with_predictions(vanilla, train_points[kind], kind, num_classes)
        for kind in kinds
    ]
    candidate_sets = equalize_sizes(candidate_sets, seeds[3])
    reports = tuple(metric_report(in_embed, c, k) for c in candidate_sets)
    ranked = tuple(rank_candidates(list(reports), epsilon_rel))

    rejection = num_classes
    outcomes = {}
    for i, kind in enumerate(kinds):
        net_seed = seeds[6 + 3 * i]
        result = train(
            init_mlp([data.dim, *hidden, num_classes + 1], net_seed),
            data,
            train_points[kind],
            TrainConfig(epochs=epochs, seed=net_seed, mode="augmented"),
        )
        in_val_loss = zero_one_in_loss(
            predict_classes(result.net, val_in.points), val_in.labels
        )
        per_out = {
            other: zero_one_ood_loss(
                predict_classes(result.net, val_points[other]), rejection
            )
            for other in kinds
        }
        record = LossRecord(
            in_train_loss=result.in_train_loss,
            in_val_loss=in_val_loss,
            ood_train_loss=result.ood_train_loss,
            per_out_val_losses=per_out,
        )
        unseen = [1.0 - per_out[other] for other in kinds if other != kind]
        outcomes[kind] = CandidateOutcome(
            name=kind,
            report=reports[i],
            record=record,
            gap=gap_score(record, lam),
            mean_unseen_rejection=float(np.mean(unseen)),
        )

    metric_order = tuple(rc.report.ood_name for rc in ranked)
    oracle_order = tuple(
        sorted(kinds, key=lambda name: (-outcomes[name].mean_unseen_rejection, name))
    )
    gap_winner = select_proper_ood({name: o.gap for name, o in outcomes.items()})
    return RankingResult(
        seed=seed,
        data=data,
        reports=reports,
        ranked=ranked,
        outcomes=outcomes,
        metric_order=metric_order,
        oracle_order=oracle_order,
        gap_winner=gap_winner,
    )


@dataclass(frozen=True)
class FgsResult:
    seed: int
    data: ToyDataset
    sweep: SweepReport
    ring_points: np.ndarray

    def summary(self) -> dict:
        rows = self.sweep.rows
        return {
            "seed": self.seed,
            "alphas": [r.alpha for r in rows],
            "vanilla_err": [r.vanilla_err for r in rows],
            "aug_err": [r.aug_err for r in rows],
            "aug_rej": [r.aug_rej for r in rows],
            "cd": [r.cd for r in rows],
            "train_ood_cd": self.sweep.train_ood_cd,
            "vanilla_err_increase": rows[-1].vanilla_err - rows[0].vanilla_err,
            "aug_rej_increase": rows[-1].aug_rej - rows[0].aug_rej,
        }


def run_fgs_experiment(
    seed: int,
    n: int = 600,
    noise: float = 0.35,
    num_classes: int = 8,
    m_ood: int = 600,
    epochs: int = 250,
    k: int = DEFAULT_K,
    alphas=DEFAULT_FGS_ALPHAS,
    hidden=DEFAULT_HIDDEN,
    margin: float = 0.9,
) -> FgsResult:
    """Black-box FGS sweep against a vanilla and a ring-trained augmented victim."""
    seeds = derive_seeds(seed, 5)
    data = make_dataset("gaussian_clusters", n, noise, seeds[0], num_classes=num_classes)
    ring = make_ood_candidate("ring", data, m_ood, seeds[1], margin=margin)
    surrogate = train(
        init_mlp([data.dim, *hidden, num_classes], seeds[2]),
        data,
        None,
        TrainConfig(epochs=epochs, seed=seeds[2], mode="vanilla"),
    ).net
    victim_vanilla = train(
        init_mlp([data.dim, *hidden, num_classes], seeds[3]),
        data,
        None,
        TrainConfig(epochs=epochs, seed=seeds[3], mode="vanilla"),
    ).net
    victim_aug = train(
        init_mlp([data.dim, *hidden, num_classes + 1], seeds[4]),
        data,
        ring,
        TrainConfig(epochs=epochs, seed=seeds[4], mode="augmented"),
    ).net
    sweep = adversary_sweep(
        surrogate,
        victim_vanilla,
        victim_aug,
        data,
        list(alphas),
        k=k,
        input_box=default_input_box(data.points),
        train_ood_points=ring,
        surrogate_id=f"vanilla-mlp-seed{seeds[2]}",
    )
    return FgsResult(seed=seed, data=data, sweep=sweep, ring_points=ring)
