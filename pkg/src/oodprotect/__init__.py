"""Toolkit for differentiating candidate OOD sets by feature-space protectiveness."""

from .adversarial import (
    FgsBatch,
    SweepReport,
    SweepRow,
    adversary_sweep,
    default_input_box,
    fgs_attack,
    fgs_batch,
)
from .detector_eval import (
    AugmentedEval,
    ScoreEval,
    augmented_eval,
    auroc,
    fpr_at_tpr,
    score_eval,
)
from .embeddings import (
    EmbeddingSet,
    FormatError,
    ValidationError,
    equalize_sizes,
    load_embedding_set,
    save_embedding_set,
    subsample,
)
from .gaps import (
    GapScore,
    LossRecord,
    gap_score,
    select_proper_ood,
    zero_one_in_loss,
    zero_one_ood_loss,
)
from .knn import KnnGraph, build_knn_graph
from .metrics import (
    ClassHistogram,
    MetricReport,
    RankedCandidate,
    class_distribution,
    coverage_distance,
    coverage_ratio,
    metric_report,
    rank_candidates,
    softmax_entropy,
)
from .toynet import (
    Mlp,
    ToyDataset,
    TrainConfig,
    TrainResult,
    forward,
    init_mlp,
    load_mlp,
    make_dataset,
    make_ood_candidate,
    save_mlp,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedEval",
    "ClassHistogram",
    "EmbeddingSet",
    "FgsBatch",
    "FormatError",
    "GapScore",
    "KnnGraph",
    "LossRecord",
    "MetricReport",
    "Mlp",
    "RankedCandidate",
    "ScoreEval",
    "SweepReport",
    "SweepRow",
    "ToyDataset",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "adversary_sweep",
    "augmented_eval",
    "auroc",
    "build_knn_graph",
    "class_distribution",
    "coverage_distance",
    "coverage_ratio",
    "default_input_box",
    "equalize_sizes",
    "fgs_attack",
    "fgs_batch",
    "forward",
    "fpr_at_tpr",
    "gap_score",
    "init_mlp",
    "load_embedding_set",
    "load_mlp",
    "make_dataset",
    "make_ood_candidate",
    "metric_report",
    "rank_candidates",
    "save_embedding_set",
    "save_mlp",
    "score_eval",
    "select_proper_ood",
    "softmax_entropy",
    "subsample",
    "train",
    "zero_one_in_loss",
    "zero_one_ood_loss",
]
