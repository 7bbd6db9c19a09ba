"""Exact k-nearest-neighbor coverage graph between two embedding sets.

For every OOD point the k nearest in-distribution points (Euclidean, in
feature space) are found by exact brute force. Neighbor selection compares
squared distances and breaks ties by lower in-distribution index, so the
graph is deterministic and reproducible across implementations. An OOD
point coincident with an in-distribution point keeps that zero-distance
edge: coverage means membership in the k-NN list, which preserves the
identity sum(covered_counts) == k * M.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet, ValidationError

# cap on elements per (block x N x d) difference tensor, ~64 MB of float64
_BLOCK_ELEMENT_BUDGET = 8_000_000


def _thread_count() -> int:
    raw = os.environ.get("OODP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class KnnGraph:
    """k-NN edges from each OOD point to the in-distribution set.

    neighbor_indices[j] holds the k in-distribution indices nearest to OOD
    point j, ascending by distance; neighbor_distances matches it.
    covered_counts[i] is the number of OOD points that list i.
    """

    n_in: int
    n_ood: int
    k: int
    neighbor_indices: np.ndarray
    neighbor_distances: np.ndarray
    covered_counts: np.ndarray

    def __post_init__(self):
        if self.neighbor_indices.shape != (self.n_ood, self.k):
            raise ValueError("neighbor_indices shape mismatch")
        if self.neighbor_distances.shape != (self.n_ood, self.k):
            raise ValueError("neighbor_distances shape mismatch")
        if self.covered_counts.shape != (self.n_in,):
            raise ValueError("covered_counts shape mismatch")
        if int(self.covered_counts.sum()) != self.k * self.n_ood:
            raise ValueError("covered_counts must sum to k * n_ood")
        for arr in (self.neighbor_indices, self.neighbor_distances, self.covered_counts):
            arr.setflags(write=False)

    def edges(self, j: int) -> list[tuple[int, float]]:
        """(in-dist index, distance) pairs for OOD point j, nearest first."""
        return [
            (int(i), float(w))
            for i, w in zip(self.neighbor_indices[j], self.neighbor_distances[j])
        ]

    def dump_csv(self, path) -> None:
        lines = ["j,i,rank,distance"]
        for j in range(self.n_ood):
            for rank in range(self.k):
                lines.append(
                    f"{j},{self.neighbor_indices[j, rank]},{rank},"
                    f"{self.neighbor_distances[j, rank]!r}"
                )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _normalized_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # zero vectors stay put
    return x / norms


def _topk_block(block: np.ndarray, in_vecs: np.ndarray, k: int):
    """Exact k nearest rows of in_vecs for each row of block."""
    # direct squared differences: no |a|^2+|b|^2-2ab cancellation near
    # coincident points, so zero distances come out exactly zero
    d2 = np.square(block[:, None, :] - in_vecs[None, :, :]).sum(axis=2)
    b = block.shape[0]
    idx_out = np.empty((b, k), dtype=np.int64)
    dist_out = np.empty((b, k), dtype=np.float64)
    for r in range(b):
        row = d2[r]
        if k == row.shape[0]:
            candidates = np.arange(row.shape[0])
        else:
            part = np.argpartition(row, k - 1)[:k]
            kth = row[part].max()
            candidates = np.flatnonzero(row <= kth)
        order = np.lexsort((candidates, row[candidates]))[:k]
        chosen = candidates[order]
        idx_out[r] = chosen
        dist_out[r] = np.sqrt(row[chosen])
    return idx_out, dist_out


def build_knn_graph(
    in_set: EmbeddingSet,
    ood_set: EmbeddingSet,
    k: int,
    normalize: bool = False,
) -> KnnGraph:
    """Exact k-NN graph from ood_set into in_set by Euclidean distance.

    normalize=True L2-normalizes every vector of both sets first (opt-in;
    raw penultimate features are the default). Parallelism over OOD blocks
    is capped by the OODP_THREADS environment variable; the result is
    identical either way.
    """
    if in_set.dim != ood_set.dim:
        raise ValidationError(
            f"dimension mismatch: {in_set.name} has d={in_set.dim}, "
            f"{ood_set.name} has d={ood_set.dim}"
        )
    n, m = len(in_set), len(ood_set)
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    in_vecs = in_set.vectors.astype(np.float64)
    ood_vecs = ood_set.vectors.astype(np.float64)
    if normalize:
        in_vecs = _normalized_rows(in_vecs)
        ood_vecs = _normalized_rows(ood_vecs)

    block = max(1, _BLOCK_ELEMENT_BUDGET // (n * in_set.dim))
    starts = list(range(0, m, block))
    indices = np.empty((m, k), dtype=np.int64)
    distances = np.empty((m, k), dtype=np.float64)

    def run(start: int):
        stop = min(start + block, m)
        indices[start:stop], distances[start:stop] = _topk_block(
            ood_vecs[start:stop], in_vecs, k
        )

    threads = _thread_count()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)

    covered = np.bincount(indices.ravel(), minlength=n).astype(np.int64)
    return KnnGraph(
        n_in=n,
        n_ood=m,
        k=k,
        neighbor_indices=indices,
        neighbor_distances=distances,
        covered_counts=covered,
    )
