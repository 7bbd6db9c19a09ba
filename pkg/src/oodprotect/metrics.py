"""Protectiveness metrics for a candidate OOD set against an in-distribution set.

Three quantities summarize how well an OOD set covers the class regions of
the in-distribution task in feature space:

* softmax entropy (SE): entropy, in nats, of the distribution of predicted
  classes over the OOD samples. ln(K) means the samples spread evenly over
  all K classes; 0 means they collapse onto one.
* coverage ratio (CR): fraction of in-distribution points that appear in the
  k-NN list of at least one OOD point.
* coverage distance (CD): mean distance from OOD points to their k nearest
  in-distribution neighbors, in raw feature units.

Candidates are ordered primarily by SE and CR (high is protective); CD only
breaks near-ties, smaller being better.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet
from .knn import KnnGraph, build_knn_graph

DEFAULT_K = 4
DEFAULT_EPSILON_REL = 0.05

REPORT_CSV_HEADER = "ood_name,cr_percent,se,cd,k,n_in,n_ood"
RULE_SINGLETON = "singleton"
RULE_LEADER = "leader"
RULE_SCORE = "se-cr-score"
RULE_CD = "cd-tiebreak"


@dataclass(frozen=True)
class ClassHistogram:
    """Counts of OOD samples per predicted class."""

    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("counts must be a nonempty 1-d array")
        if counts.min() < 0 or int(counts.sum()) != self.total:
            raise ValueError("counts must be nonnegative and sum to total")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return self.counts.size

    def probabilities(self) -> np.ndarray:
        return self.counts.astype(np.float64) / float(self.total)


@dataclass(frozen=True)
class MetricReport:
    """SE/CR/CD for one (in-distribution, OOD) pair."""

    ood_name: str
    se: float
    se_max: float
    cr: float
    cd: float
    k: int
    n_in: int
    n_ood: int

    def __post_init__(self):
        if not (-1e-12 <= self.se <= self.se_max + 1e-12):
            raise ValueError(f"se={self.se} outside [0, ln K]")
        if not (0.0 <= self.cr <= 1.0):
            raise ValueError(f"cr={self.cr} outside [0, 1]")
        if self.cd < 0.0:
            raise ValueError(f"cd={self.cd} must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "ood_name": self.ood_name,
            "se": self.se,
            "se_max": self.se_max,
            "cr": self.cr,
            "cr_percent": 100.0 * self.cr,
            "cd": self.cd,
            "k": self.k,
            "n_in": self.n_in,
            "n_ood": self.n_ood,
        }

    def to_csv_row(self) -> str:
        return (
            f"{self.ood_name},{100.0 * self.cr!r},{self.se!r},{self.cd!r},"
            f"{self.k},{self.n_in},{self.n_ood}"
        )

    @staticmethod
    def from_json_dict(data: dict) -> "MetricReport":
        return MetricReport(
            ood_name=data["ood_name"],
            se=float(data["se"]),
            se_max=float(data["se_max"]),
            cr=float(data["cr"]),
            cd=float(data["cd"]),
            k=int(data["k"]),
            n_in=int(data["n_in"]),
            n_ood=int(data["n_ood"]),
        )


def class_distribution(ood_set: EmbeddingSet) -> ClassHistogram:
    """Histogram of the OOD set's predicted classes."""
    if ood_set.predicted is None:
        raise ValueError(f"{ood_set.name}: predictions are required")
    counts = np.bincount(ood_set.predicted, minlength=ood_set.num_classes)
    return ClassHistogram(counts=counts, total=len(ood_set))


def softmax_entropy(hist: ClassHistogram) -> float:
    """Entropy of the predicted-class distribution in nats, with 0*ln(0) = 0."""
    p = hist.probabilities()
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum() + 0.0)  # +0.0 folds -0.0 into 0.0


def coverage_ratio(graph: KnnGraph) -> float:
    """Fraction of in-distribution points covered by at least one OOD point."""
    return float(np.count_nonzero(graph.covered_counts)) / graph.n_in


def coverage_distance(graph: KnnGraph) -> float:
    """Mean distance over all k * M neighbor edges."""
    return float(graph.neighbor_distances.sum()) / (graph.k * graph.n_ood)


def metric_report(
    in_set: EmbeddingSet,
    ood_set: EmbeddingSet,
    k: int = DEFAULT_K,
    normalize: bool = False,
) -> MetricReport:
    """Compute SE, CR and CD for one candidate OOD set."""
    if in_set.num_classes != ood_set.num_classes:
        raise ValueError(
            f"class count mismatch: {in_set.name} has K={in_set.num_classes}, "
            f"{ood_set.name} has K={ood_set.num_classes}"
        )
    graph = build_knn_graph(in_set, ood_set, k, normalize=normalize)
    se = softmax_entropy(class_distribution(ood_set))
    return MetricReport(
        ood_name=ood_set.name,
        se=se,
        se_max=math.log(in_set.num_classes),
        cr=coverage_ratio(graph),
        cd=coverage_distance(graph),
        k=k,
        n_in=len(in_set),
        n_ood=len(ood_set),
    )


@dataclass(frozen=True)
class RankedCandidate:
    """One entry of a protectiveness ranking.

    rule names the decision that separated this candidate from the one
    ranked immediately above it: "leader" for the top entry, "se-cr-score"
    when the combined SE/CR score decided, "cd-tiebreak" when both sides of
    the boundary were relatively equal on SE and CR and the smaller CD won,
    and "singleton" for a one-candidate ranking.
    """

    rank: int
    report: MetricReport
    score: float
    rule: str

    def to_json_dict(self) -> dict:
        out = {"rank": self.rank, "score": self.score, "rule": self.rule}
        out.update(self.report.to_json_dict())
        return out


def rank_candidates(
    reports: list[MetricReport],
    epsilon_rel: float = DEFAULT_EPSILON_REL,
) -> list[RankedCandidate]:
    """Order candidates from most to least protective.

    The primary score is (se / ln K + cr) / 2, descending. Candidates whose
    SE and CR are both within a relative epsilon_rel of the respective group
    leaders count as relatively equal and are reordered among themselves by
    ascending CD. Remaining ties fall back to ascending CD, then name, so
    the order is fully deterministic.
    """
    if not reports:
        raise ValueError("reports must be nonempty")
    if not (0.0 <= epsilon_rel < 1.0):
        raise ValueError("epsilon_rel must lie in [0, 1)")
    se_max = reports[0].se_max
    k = reports[0].k
    for r in reports[1:]:
        if r.se_max != se_max:
            raise ValueError("all reports must share the same class count")
        if r.k != k:
            raise ValueError("all reports must share the same k")
    if se_max <= 0.0:
        raise ValueError("ranking requires at least two classes")

    def score(r: MetricReport) -> float:
        return (r.se / se_max + r.cr) / 2.0

    ordered = sorted(reports, key=lambda r: (-score(r), r.cd, r.ood_name))

    se_lead = max(r.se for r in reports)
    cr_lead = max(r.cr for r in reports)
    near = [
        r
        for r in ordered
        if r.se >= se_lead * (1.0 - epsilon_rel) and r.cr >= cr_lead * (1.0 - epsilon_rel)
    ]
    if len(near) > 1:
        slots = [i for i, r in enumerate(ordered) if r in near]
        by_cd = sorted(near, key=lambda r: (r.cd, r.ood_name))
        for slot, rep in zip(slots, by_cd):
            ordered[slot] = rep

    near_names = {r.ood_name for r in near}
    out = []
    for i, rep in enumerate(ordered):
        if len(ordered) == 1:
            rule = RULE_SINGLETON
        elif i == 0:
            rule = RULE_LEADER
        elif rep.ood_name in near_names and ordered[i - 1].ood_name in near_names:
            rule = RULE_CD
        else:
            rule = RULE_SCORE
        out.append(RankedCandidate(rank=i + 1, report=rep, score=score(rep), rule=rule))
    return out


def reports_to_json(reports: list[MetricReport]) -> str:
    return json.dumps([r.to_json_dict() for r in reports], indent=2)


def reports_to_csv(reports: list[MetricReport]) -> str:
    return "\n".join([REPORT_CSV_HEADER] + [r.to_csv_row() for r in reports]) + "\n"
