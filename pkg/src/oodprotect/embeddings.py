"""Embedding sets and their on-disk formats.

An EmbeddingSet holds feature-space vectors (penultimate-layer activations
produced upstream) with optional true labels and predicted classes. Two
formats are supported:

CSV (human-auditable)
    # ood-protect v1 dim=<d> k=<K> labels=<0|1> pred=<0|1>
    <d floats>[,<label>][,<pred>]

Packed binary (little-endian)
    magic "OODP", version u16=1, d u32, N u64, K u32, flags u8
    (bit 0: labels present, bit 1: predictions present), then N*d
    row-major float32 features, then N u32 labels, then N u32 predictions.

Features are stored as 32-bit floats; all metric arithmetic downstream is
64-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Xoshiro256StarStar, derive_seeds

MAGIC = b"OODP"
FORMAT_VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sHIQIB")
_FLAG_LABELS = 0x01
_FLAG_PRED = 0x02


class FormatError(ValueError):
    """A file does not conform to the declared on-disk format."""


class ValidationError(ValueError):
    """Contents violate an EmbeddingSet invariant."""


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable set of d-dimensional feature vectors with optional class ids.

    labels/predicted, when present, are per-row class ids in [0, num_classes).
    """

    name: str
    vectors: np.ndarray
    num_classes: int
    labels: np.ndarray | None = None
    predicted: np.ndarray | None = None

    def __post_init__(self):
        if not self.name:
            raise ValidationError("name must be nonempty")
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise ValidationError(
                f"vectors must be a nonempty 2-d array, got shape {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise ValidationError(f"{self.name}: vectors contain non-finite values")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be positive")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        for field in ("labels", "predicted"):
            ids = getattr(self, field)
            if ids is None:
                continue
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (vectors.shape[0],):
                raise ValidationError(
                    f"{self.name}: {field} length {ids.shape} does not match "
                    f"{vectors.shape[0]} rows"
                )
            if ids.min() < 0 or ids.max() >= self.num_classes:
                raise ValidationError(
                    f"{self.name}: {field} ids must lie in [0, {self.num_classes})"
                )
            ids.setflags(write=False)
            object.__setattr__(self, field, ids)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def take(self, indices, name: str | None = None) -> "EmbeddingSet":
        """New set containing the given rows, labels/predictions travelling along."""
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingSet(
            name=name if name is not None else self.name,
            vectors=self.vectors[idx],
            num_classes=self.num_classes,
            labels=None if self.labels is None else self.labels[idx],
            predicted=None if self.predicted is None else self.predicted[idx],
        )


def _detect_format(path: Path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "binary" if head == MAGIC else "csv"


def load_embedding_set(path, format: str | None = None, name: str | None = None) -> EmbeddingSet:
    """Load an EmbeddingSet from `path`.

    format is "csv", "binary", or None to sniff the magic bytes. The set
    name defaults to the file stem. Row order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = _detect_format(path)
    if format == "csv":
        return _load_csv(path, name or path.stem)
    if format == "binary":
        return _load_binary(path, name or path.stem)
    raise ValueError(f"unknown format {format!r}")


def save_embedding_set(emb: EmbeddingSet, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "csv":
        _save_csv(emb, path)
    elif format == "binary":
        _save_binary(emb, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def _parse_csv_header(line: str) -> tuple[int, int, bool, bool]:
    tokens = line.strip().split()
    if tokens[:2] != ["#", "ood-protect"] or len(tokens) < 3 or tokens[2] != "v1":
        raise FormatError("missing '# ood-protect v1' header line")
    fields = {}
    for tok in tokens[3:]:
        key, _, value = tok.partition("=")
        fields[key] = value
    try:
        dim = int(fields["dim"])
        k = int(fields["k"])
        has_labels = fields["labels"] == "1"
        has_pred = fields["pred"] == "1"
    except KeyError as exc:
        raise FormatError(f"header is missing field {exc}") from exc
    if dim < 1 or k < 1:
        raise FormatError(f"header declares invalid dim={dim} k={k}")
    return dim, k, has_labels, has_pred


def _load_csv(path: Path, name: str) -> EmbeddingSet:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise FormatError(f"{path}: no rows")
    dim, num_classes, has_labels, has_pred = _parse_csv_header(lines[0])
    expected = dim + int(has_labels) + int(has_pred)
    rows, labels, preds = [], [], []
    for row_idx, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != expected:
            raise FormatError(
                f"{path}: row {row_idx} has {len(parts)} fields, expected {expected}"
            )
        try:
            rows.append([np.float32(float(v)) for v in parts[:dim]])
            cursor = dim
            if has_labels:
                labels.append(int(parts[cursor]))
                cursor += 1
            if has_pred:
                preds.append(int(parts[cursor]))
        except ValueError as exc:
            raise FormatError(f"{path}: row {row_idx}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no rows")
    return EmbeddingSet(
        name=name,
        vectors=np.array(rows, dtype=np.float32),
        num_classes=num_classes,
        labels=np.array(labels, dtype=np.int64) if has_labels else None,
        predicted=np.array(preds, dtype=np.int64) if has_pred else None,
    )


def _format_float(value: np.float32) -> str:
    # shortest decimal string that round-trips the float32 exactly
    return np.format_float_positional(value, unique=True, trim="0")


def _save_csv(emb: EmbeddingSet, path: Path) -> None:
    has_labels = emb.labels is not None
    has_pred = emb.predicted is not None
    lines = [
        f"# ood-protect v1 dim={emb.dim} k={emb.num_classes} "
        f"labels={int(has_labels)} pred={int(has_pred)}"
    ]
    for i in range(len(emb)):
        parts = [_format_float(v) for v in emb.vectors[i]]
        if has_labels:
            parts.append(str(int(emb.labels[i])))
        if has_pred:
            parts.append(str(int(emb.predicted[i])))
        lines.append(",".join(parts))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_binary(path: Path, name: str) -> EmbeddingSet:
    blob = path.read_bytes()
    if len(blob) == 0:
        raise FormatError(f"{path}: no rows")
    if len(blob) < _HEADER_STRUCT.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, n, num_classes, flags = _HEADER_STRUCT.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n == 0:
        raise FormatError(f"{path}: no rows")
    has_labels = bool(flags & _FLAG_LABELS)
    has_pred = bool(flags & _FLAG_PRED)
    need = _HEADER_STRUCT.size + 4 * n * dim + 4 * n * (int(has_labels) + int(has_pred))
    if len(blob) != need:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {need}")
    offset = _HEADER_STRUCT.size
    vectors = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=offset)
    vectors = vectors.reshape(n, dim).copy()
    offset += 4 * n * dim
    labels = preds = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<u4", count=n, offset=offset).astype(np.int64)
        offset += 4 * n
    if has_pred:
        preds = np.frombuffer(blob, dtype="<u4", count=n, offset=offset).astype(np.int64)
    return EmbeddingSet(
        name=name, vectors=vectors, num_classes=num_classes, labels=labels, predicted=preds
    )


def _save_binary(emb: EmbeddingSet, path: Path) -> None:
    flags = 0
    if emb.labels is not None:
        flags |= _FLAG_LABELS
    if emb.predicted is not None:
        flags |= _FLAG_PRED
    parts = [
        _HEADER_STRUCT.pack(MAGIC, FORMAT_VERSION, emb.dim, len(emb), emb.num_classes, flags)
    ]
    parts.append(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())
    if emb.labels is not None:
        parts.append(emb.labels.astype("<u4").tobytes())
    if emb.predicted is not None:
        parts.append(emb.predicted.astype("<u4").tobytes())
    path.write_bytes(b"".join(parts))


def subsample(emb: EmbeddingSet, n: int, seed: int) -> EmbeddingSet:
    """Uniform sample of n rows without replacement, deterministic in seed.

    If n covers the whole set, the set is returned unchanged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= len(emb):
        return emb
    chosen = Xoshiro256StarStar(seed).sample_indices(len(emb), n)
    return emb.take(chosen)


def equalize_sizes(candidates: list[EmbeddingSet], seed: int) -> list[EmbeddingSet]:
    """Subsample every candidate down to the smallest candidate's size.

    Each candidate consumes its own stream seed derived from `seed`, so the
    result does not depend on how the others are sized.
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    target = min(len(c) for c in candidates)
    seeds = derive_seeds(seed, len(candidates))
    return [subsample(c, target, s) for c, s in zip(candidates, seeds)]
