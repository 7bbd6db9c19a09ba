"""Small feed-forward network engine and synthetic data generators.

Forward pass, backprop and SGD are implemented directly on numpy arrays so
training is deterministic for a fixed seed and gradients can be verified
against finite differences. Hidden layers use ReLU; the output is a softmax
over K classes (vanilla, calibrated) or K+1 classes (augmented, where the
extra class rejects OOD inputs). The penultimate activation vector is the
feature-space embedding consumed by the coverage metrics.

Training modes
    vanilla     cross-entropy on the K in-distribution classes.
    augmented   cross-entropy on K+1 classes, OOD samples labeled K.
    calibrated  in-distribution cross-entropy plus beta times the
                cross-entropy of OOD outputs against the uniform target
                (minimized when the network outputs 1/K everywhere).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet

MODES = ("vanilla", "augmented", "calibrated")
DATASET_KINDS = ("two_moons", "gaussian_clusters")
OOD_KINDS = ("ring", "collapsed_blob", "uniform_box", "noise_cloud")

# gaussian_clusters places class centers on a circle of this radius
CLUSTER_RING_RADIUS = 4.0

_MLP_MAGIC = b"OODM"
_MLP_VERSION = 1


@dataclass(frozen=True)
class Mlp:
    """Fully-connected net: weights[i] has shape (fan_in, fan_out)."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and parallel")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape} / {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: fan-in does not match previous fan-out")
            w.setflags(write=False)
            b.setflags(write=False)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]


def init_mlp(layer_dims, seed: int) -> Mlp:
    """He-initialized network with the given [in, hidden..., out] widths."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"need at least input and output dims, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights=tuple(weights), biases=tuple(biases))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(net: Mlp, x: np.ndarray):
    """Returns (per-layer inputs, hidden pre-activations, probs)."""
    inputs = [x]
    pre = []
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        inputs.append(a)
    logits = a @ net.weights[-1] + net.biases[-1]
    return inputs, pre, _softmax(logits)


def forward(net: Mlp, x):
    """Softmax probabilities and penultimate (last hidden, post-ReLU) features.

    Accepts a single d-vector or an (n, d) matrix and returns matching shapes.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != net.in_dim:
        raise ValueError(f"input dim {arr.shape[1]} does not match net dim {net.in_dim}")
    inputs, _, probs = _forward_cached(net, arr)
    penultimate = inputs[-1]
    if single:
        return probs[0], penultimate[0]
    return probs, penultimate


def predict_classes(net: Mlp, x) -> np.ndarray:
    probs, _ = forward(net, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return probs.argmax(axis=1)


def max_softmax(net: Mlp, x) -> np.ndarray:
    probs, _ = forward(net, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return probs.max(axis=1)


def penultimate_features(net: Mlp, x) -> np.ndarray:
    _, feats = forward(net, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return feats


def _backward(net: Mlp, inputs, pre, dlogits):
    """Parameter gradients and input gradient from output-layer deltas."""
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    grads_w[-1] = inputs[-1].T @ dlogits
    grads_b[-1] = dlogits.sum(axis=0)
    delta = dlogits @ net.weights[-1].T
    for layer in range(len(net.weights) - 2, -1, -1):
        delta = delta * (pre[layer] > 0.0)
        grads_w[layer] = inputs[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        delta = delta @ net.weights[layer].T
    return grads_w, grads_b, delta


def _one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((labels.size, width))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def loss_and_grads(
    net: Mlp,
    x_in: np.ndarray,
    y_in: np.ndarray,
    x_ood: np.ndarray | None,
    mode: str,
    beta: float = 0.5,
):
    """Batch loss for the given mode and its analytic parameter gradients.

    Returns (loss, grads_w, grads_b). Augmented batches average the
    cross-entropy over the combined in+OOD rows; the calibrated OOD term
    averages over the OOD rows only and is scaled by beta.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode in ("augmented", "calibrated") and (x_ood is None or len(x_ood) == 0):
        raise ValueError(f"mode {mode!r} requires OOD data")
    x_in = np.asarray(x_in, dtype=np.float64)
    y_in = np.asarray(y_in, dtype=np.int64)

    if mode == "vanilla":
        inputs, pre, probs = _forward_cached(net, x_in)
        n = x_in.shape[0]
        loss = _mean_cross_entropy(probs, y_in)
        dlogits = (probs - _one_hot(y_in, net.out_dim)) / n
        gw, gb, _ = _backward(net, inputs, pre, dlogits)
        return loss, gw, gb

    x_ood = np.asarray(x_ood, dtype=np.float64)
    if mode == "augmented":
        rejection = net.out_dim - 1
        x = np.concatenate([x_in, x_ood])
        y = np.concatenate([y_in, np.full(x_ood.shape[0], rejection, dtype=np.int64)])
        inputs, pre, probs = _forward_cached(net, x)
        loss = _mean_cross_entropy(probs, y)
        dlogits = (probs - _one_hot(y, net.out_dim)) / x.shape[0]
        gw, gb, _ = _backward(net, inputs, pre, dlogits)
        return loss, gw, gb

    # calibrated: CE on in-dist plus beta * CE(uniform target) on OOD
    k = net.out_dim
    x = np.concatenate([x_in, x_ood])
    inputs, pre, probs = _forward_cached(net, x)
    n_in, n_ood = x_in.shape[0], x_ood.shape[0]
    probs_in, probs_ood = probs[:n_in], probs[n_in:]
    loss_in = _mean_cross_entropy(probs_in, y_in)
    loss_ood = float(-np.log(np.maximum(probs_ood, 1e-300)).mean(axis=1).sum() / n_ood)
    dlogits = np.empty_like(probs)
    dlogits[:n_in] = (probs_in - _one_hot(y_in, k)) / n_in
    dlogits[n_in:] = beta * (probs_ood - 1.0 / k) / n_ood
    gw, gb, _ = _backward(net, inputs, pre, dlogits)
    return loss_in + beta * loss_ood, gw, gb


def input_gradients(net: Mlp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the cross-entropy loss with respect to the input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"x must be (n, {net.in_dim})")
    inputs, pre, probs = _forward_cached(net, x)
    dlogits = probs - _one_hot(y, net.out_dim)  # per-sample loss, no 1/n
    _, _, dx = _backward(net, inputs, pre, dlogits)
    return dx


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    mode: str = "vanilla"
    beta: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0.0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")


@dataclass(frozen=True)
class ToyDataset:
    points: np.ndarray
    labels: np.ndarray
    kind: str
    noise: float
    seed: int
    num_classes: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or labels.shape != (points.shape[0],):
            raise ValueError("points must be (n, d) with matching labels")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_embedding_set(self, name: str | None = None) -> EmbeddingSet:
        """View the raw points as an EmbeddingSet for the metrics/io pipeline."""
        return EmbeddingSet(
            name=name or self.kind,
            vectors=self.points.astype(np.float32),
            num_classes=self.num_classes,
            labels=self.labels,
        )


@dataclass(frozen=True)
class TrainResult:
    """Trained net plus the empirical 0-1 training losses it achieved.

    ood_train_loss (fraction of OOD training points not rejected) is only
    defined for augmented mode.
    """

    net: Mlp
    in_train_loss: float
    ood_train_loss: float | None
    final_objective: float


def _balanced_counts(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def make_dataset(
    kind: str, n: int, noise: float, seed: int, num_classes: int = 2
) -> ToyDataset:
    """Synthetic 2-d classification task.

    two_moons: two interleaving unit half-circles, the second one flipped
    and shifted to (1, 0.5), with Gaussian jitter of scale `noise`.
    gaussian_clusters: num_classes isotropic Gaussians with standard
    deviation `noise`, centers equally spaced on a circle of radius
    CLUSTER_RING_RADIUS.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"kind must be one of {DATASET_KINDS}")
    if kind == "two_moons" and num_classes != 2:
        raise ValueError("two_moons is a 2-class task")
    if n < num_classes:
        raise ValueError("need at least one point per class")
    rng = np.random.default_rng(seed)
    counts = _balanced_counts(n, num_classes)
    parts, labels = [], []
    if kind == "two_moons":
        t0 = np.linspace(0.0, math.pi, counts[0])
        t1 = np.linspace(0.0, math.pi, counts[1])
        parts.append(np.column_stack([np.cos(t0), np.sin(t0)]))
        parts.append(np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]))
    else:
        angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
        centers = CLUSTER_RING_RADIUS * np.column_stack([np.cos(angles), np.sin(angles)])
        for c in range(num_classes):
            parts.append(np.tile(centers[c], (counts[c], 1)))
    for c, cnt in enumerate(counts):
        labels.append(np.full(cnt, c, dtype=np.int64))
    points = np.concatenate(parts)
    if noise > 0.0:
        points = points + rng.normal(0.0, noise, size=points.shape)
    return ToyDataset(
        points=points,
        labels=np.concatenate(labels),
        kind=kind,
        noise=noise,
        seed=seed,
        num_classes=num_classes,
    )


def _unit_rows(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    v = rng.normal(size=(m, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return v / norms


def _offset_surface_sample(
    rng: np.random.Generator, pts: np.ndarray, m: int, margin: float
) -> np.ndarray:
    """Points at distance ~margin from the dataset (its offset surface).

    Proposals push a random data point `margin` along a random direction and
    are kept only if no other data point is closer than 0.95 * margin, so
    the sample hugs the data without landing on it.
    """
    out = np.empty((m, pts.shape[1]))
    kept = 0
    attempts = 0
    limit = 200 * m
    while kept < m and attempts < limit:
        batch = min(m - kept, 128)
        attempts += batch
        idx = rng.integers(0, pts.shape[0], size=batch)
        proposals = pts[idx] + margin * _unit_rows(rng, batch, pts.shape[1])
        gaps = np.linalg.norm(proposals[:, None, :] - pts[None, :, :], axis=2).min(axis=1)
        good = proposals[gaps >= 0.95 * margin]
        take = min(len(good), m - kept)
        out[kept : kept + take] = good[:take]
        kept += take
    if kept < m:  # densely folded data: fall back to unfiltered pushes
        idx = rng.integers(0, pts.shape[0], size=m - kept)
        out[kept:] = pts[idx] + margin * _unit_rows(rng, m - kept, pts.shape[1])
    return out


def make_ood_candidate(
    kind: str, reference: ToyDataset, m: int, seed: int, margin: float = 0.5
) -> np.ndarray:
    """Synthetic OOD point set positioned relative to a reference task.

    ring          points at fixed `margin` around all class regions, sampled
                  from the dataset's offset surface (protective).
    collapsed_blob tight Gaussian blob just outside class 0 only.
    uniform_box   uniform over the data bounding box inflated 1.5x.
    noise_cloud   small Gaussian cloud far away from all data.
    """
    if kind not in OOD_KINDS:
        raise ValueError(f"kind must be one of {OOD_KINDS}")
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    pts = reference.points
    d = reference.dim
    centroid = pts.mean(axis=0)
    if kind == "ring":
        return _offset_surface_sample(rng, pts, m, margin)
    if kind == "collapsed_blob":
        members = pts[reference.labels == 0]
        anchor = members.mean(axis=0)
        away = anchor - centroid
        norm = np.linalg.norm(away)
        direction = away / norm if norm > 0.0 else np.eye(d)[0]
        spread = float(np.linalg.norm(members - anchor, axis=1).max())
        center = anchor + (spread + margin) * direction
        return center + rng.normal(0.0, 0.25 * margin, size=(m, d))
    if kind == "uniform_box":
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        mid, half = 0.5 * (lo + hi), 0.75 * (hi - lo)  # 1.5x the box
        return rng.uniform(mid - half, mid + half, size=(m, d))
    # noise_cloud
    radius = float(np.linalg.norm(pts - centroid, axis=1).max())
    direction = np.ones(d) / math.sqrt(d)
    center = centroid + 3.0 * radius * direction
    return center + rng.normal(0.0, 0.1 * radius, size=(m, d))


def _zero_one_losses(net: Mlp, data_in: ToyDataset, ood_points, mode: str):
    preds_in = predict_classes(net, data_in.points)
    in_loss = float(np.mean(preds_in != data_in.labels))
    ood_loss = None
    if mode == "augmented":
        rejection = net.out_dim - 1
        preds_ood = predict_classes(net, ood_points)
        ood_loss = float(np.mean(preds_ood != rejection))
    return in_loss, ood_loss


def train(
    net: Mlp,
    data_in: ToyDataset,
    data_ood: np.ndarray | None,
    cfg: TrainConfig,
) -> TrainResult:
    """SGD with momentum; returns a new trained net, the input is untouched.

    Vanilla batches sweep the shuffled in-distribution set. Augmented and
    calibrated batches are half in-distribution, half OOD (the OOD stream
    cycles through its own shuffle), so the rejection/uniform signal is
    never starved.
    """
    if cfg.mode in ("augmented", "calibrated"):
        if data_ood is None or len(data_ood) == 0:
            raise ValueError(f"mode {cfg.mode!r} requires OOD data")
        data_ood = np.asarray(data_ood, dtype=np.float64)
    expected_out = data_in.num_classes + (1 if cfg.mode == "augmented" else 0)
    if net.out_dim != expected_out:
        raise ValueError(
            f"mode {cfg.mode!r} on a {data_in.num_classes}-class task needs "
            f"{expected_out} outputs, net has {net.out_dim}"
        )

    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    rng = np.random.default_rng(cfg.seed)
    x_all = data_in.points
    y_all = data_in.labels
    n = len(data_in)
    last_loss = math.inf
    current = Mlp(weights=tuple(weights), biases=tuple(biases))

    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        if cfg.mode == "vanilla":
            batch_starts = range(0, n, cfg.batch_size)
            half = None
        else:
            half = max(1, cfg.batch_size // 2)
            perm_ood = rng.permutation(len(data_ood))
            batch_starts = range(0, n, half)
        epoch_loss = 0.0
        steps = 0
        for start in batch_starts:
            if cfg.mode == "vanilla":
                idx = perm[start : start + cfg.batch_size]
                xb, yb, ob = x_all[idx], y_all[idx], None
            else:
                idx = perm[start : start + half]
                pos = (start + np.arange(idx.size)) % len(data_ood)
                xb, yb = x_all[idx], y_all[idx]
                ob = data_ood[perm_ood[pos]]
            loss, gw, gb = loss_and_grads(current, xb, yb, ob, cfg.mode, cfg.beta)
            epoch_loss += loss
            steps += 1
            for layer in range(len(weights)):
                vel_w[layer] = cfg.momentum * vel_w[layer] - cfg.learning_rate * gw[layer]
                vel_b[layer] = cfg.momentum * vel_b[layer] - cfg.learning_rate * gb[layer]
                weights[layer] = weights[layer] + vel_w[layer]
                biases[layer] = biases[layer] + vel_b[layer]
            current = Mlp(weights=tuple(weights), biases=tuple(biases))
        last_loss = epoch_loss / max(steps, 1)

    trained = current
    in_loss, ood_loss = _zero_one_losses(trained, data_in, data_ood, cfg.mode)
    return TrainResult(
        net=trained,
        in_train_loss=in_loss,
        ood_train_loss=ood_loss,
        final_objective=last_loss,
    )


def save_mlp(net: Mlp, path) -> None:
    """Packed little-endian binary: magic, version, dims, then f64 params."""
    dims = net.dims
    parts = [_MLP_MAGIC, struct.pack("<HI", _MLP_VERSION, len(dims))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_mlp(path) -> Mlp:
    blob = Path(path).read_bytes()
    if blob[:4] != _MLP_MAGIC:
        raise ValueError("not a packed model file")
    version, n_dims = struct.unpack_from("<HI", blob, 4)
    if version != _MLP_VERSION:
        raise ValueError(f"unsupported model version {version}")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, 10))
    offset = 10 + 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if offset != len(blob):
        raise ValueError("model file has trailing bytes")
    return Mlp(weights=tuple(weights), biases=tuple(biases))
