"""Network engine: forward identities, gradients, training, generators."""

import math

import numpy as np
import pytest

from oodprotect.detector_eval import augmented_eval
from oodprotect.embeddings import load_embedding_set, save_embedding_set
from oodprotect.metrics import metric_report
from oodprotect.toynet import (
    Mlp,
    TrainConfig,
    forward,
    init_mlp,
    load_mlp,
    loss_and_grads,
    make_dataset,
    make_ood_candidate,
    predict_classes,
    save_mlp,
    train,
)
from oodprotect.experiments import embed_with_predictions


def _zero_net(dims):
    weights = tuple(np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:]))
    biases = tuple(np.zeros(b) for b in dims[1:])
    return Mlp(weights=weights, biases=biases)


def _sample_away_from_kinks(seed, dims, n_in=5, n_ood=4, threshold=1e-3):
    """Random net and batch whose hidden pre-activations avoid the ReLU kink.

    Central differences are only trustworthy away from the non-differentiable
    point, so configurations with a pre-activation within `threshold` of zero
    are re-drawn; a 1e-6 parameter nudge cannot cross that gap.
    """
    d = dims[0]
    for attempt in range(200):
        rng = np.random.default_rng(seed + 1000 * attempt)
        net = init_mlp(dims, seed + 1000 * attempt)
        x_in = rng.normal(size=(n_in, d))
        y_in = rng.integers(0, dims[-1] - 1, n_in)
        x_ood = rng.normal(size=(n_ood, d)) + 1.5
        x = np.concatenate([x_in, x_ood])
        clear = True
        a = x
        for w, b in zip(net.weights[:-1], net.biases[:-1]):
            z = a @ w + b
            if np.abs(z).min() < threshold:
                clear = False
                break
            a = np.maximum(z, 0.0)
        if clear:
            return net, x_in, y_in, x_ood
    raise AssertionError("could not sample a kink-free configuration")


def finite_difference_grads(net, x_in, y_in, x_ood, mode, beta, h=1e-5):
    def loss_at(layer, name, index, delta):
        weights = [w.copy() for w in net.weights]
        biases = [b.copy() for b in net.biases]
        target = weights if name == "w" else biases
        target[layer][index] += delta
        probe = Mlp(weights=tuple(weights), biases=tuple(biases))
        value, _, _ = loss_and_grads(probe, x_in, y_in, x_ood, mode, beta)
        return value

    fd_w, fd_b = [], []
    for layer in range(len(net.weights)):
        gw = np.zeros_like(net.weights[layer])
        for index in np.ndindex(gw.shape):
            gw[index] = (
                loss_at(layer, "w", index, h) - loss_at(layer, "w", index, -h)
            ) / (2 * h)
        fd_w.append(gw)
        gb = np.zeros_like(net.biases[layer])
        for index in np.ndindex(gb.shape):
            gb[index] = (
                loss_at(layer, "b", index, h) - loss_at(layer, "b", index, -h)
            ) / (2 * h)
        fd_b.append(gb)
    return fd_w, fd_b


def max_relative_error(analytic, numeric):
    """Elementwise |a - f| / max(|a|, |f|).

    Components below 1e-3 in magnitude are compared absolutely instead:
    central differences carry an irreducible ~1e-9 noise floor, so a pure
    ratio on near-zero gradients measures that noise, not correctness.
    """
    worst = 0.0
    for a, f in zip(analytic, numeric):
        diff = np.abs(a - f)
        denom = np.maximum(np.abs(a), np.abs(f))
        rel = np.where(denom > 1e-3, diff / np.maximum(denom, 1e-300), diff)
        worst = max(worst, float(rel.max()))
    return worst


def gradient_check(seed, mode, dims=(3, 6, 5, 3), beta=0.5):
    out = dims[-1] + 1 if mode == "augmented" else dims[-1]
    net, x_in, y_in, x_ood = _sample_away_from_kinks(seed, (*dims[:-1], out))
    y_in = np.minimum(y_in, dims[-1] - 1)
    ood = None if mode == "vanilla" else x_ood
    _, gw, gb = loss_and_grads(net, x_in, y_in, ood, mode, beta)
    fd_w, fd_b = finite_difference_grads(net, x_in, y_in, ood, mode, beta)
    return max(max_relative_error(gw, fd_w), max_relative_error(gb, fd_b))


class TestForward:
    def test_zero_net_is_uniform(self):
        net = _zero_net([2, 4, 3])
        probs, penult = forward(net, np.array([0.7, -0.2]))
        np.testing.assert_allclose(probs, [1 / 3] * 3, atol=1e-15)
        assert penult.shape == (4,)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            net = init_mlp([3, 8, 8, 5], seed)
            probs, _ = forward(net, rng.normal(size=(40, 3)) * 3)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
            assert probs.min() >= 0.0

    def test_penultimate_is_last_hidden_post_relu(self):
        net = init_mlp([2, 5, 4, 3], 1)
        x = np.random.default_rng(1).normal(size=(6, 2))
        _, penult = forward(net, x)
        h1 = np.maximum(x @ net.weights[0] + net.biases[0], 0.0)
        h2 = np.maximum(h1 @ net.weights[1] + net.biases[1], 0.0)
        np.testing.assert_array_equal(penult, h2)
        assert penult.min() >= 0.0

    def test_dimension_mismatch(self):
        net = init_mlp([3, 4, 2], 0)
        with pytest.raises(ValueError):
            forward(net, np.zeros((5, 2)))


class TestGradients:
    @pytest.mark.parametrize("mode", ["vanilla", "augmented", "calibrated"])
    def test_all_modes_match_finite_differences(self, mode):
        for seed in (7, 8, 9):
            assert gradient_check(seed, mode) < 1e-5

    def test_calibrated_ood_term_minimized_by_uniform_output(self):
        """Cross-entropy to the uniform target bottoms out at ln K."""
        k = 4
        x_in = np.zeros((1, 2))
        y_in = np.zeros(1, dtype=int)
        x_ood = np.array([[0.3, -0.8], [1.2, 0.5]])

        def ood_term(net):
            with_term, _, _ = loss_and_grads(net, x_in, y_in, x_ood, "calibrated", beta=1.0)
            without, _, _ = loss_and_grads(net, x_in, y_in, x_ood, "calibrated", beta=0.0)
            return with_term - without

        uniform_net = _zero_net([2, 5, k])
        assert ood_term(uniform_net) == pytest.approx(math.log(k), abs=1e-12)
        for seed in range(5):
            assert ood_term(init_mlp([2, 5, k], seed)) >= math.log(k) - 1e-12


class TestTraining:
    def test_deterministic_given_seed(self):
        data = make_dataset("gaussian_clusters", 60, 0.3, 5, num_classes=3)
        cfg = TrainConfig(epochs=20, seed=3)
        a = train(init_mlp([2, 8, 3], 1), data, None, cfg)
        b = train(init_mlp([2, 8, 3], 1), data, None, cfg)
        for wa, wb in zip(a.net.weights, b.net.weights):
            assert wa.tobytes() == wb.tobytes()
        assert a.in_train_loss == b.in_train_loss

    def test_input_net_not_mutated(self):
        data = make_dataset("gaussian_clusters", 40, 0.3, 5, num_classes=2)
        net = init_mlp([2, 8, 2], 1)
        before = [w.copy() for w in net.weights]
        train(net, data, None, TrainConfig(epochs=3, seed=0))
        for w0, w1 in zip(before, net.weights):
            np.testing.assert_array_equal(w0, w1)

    def test_separable_blobs_reach_high_accuracy(self):
        data = make_dataset("gaussian_clusters", 120, 0.25, 7, num_classes=2)
        result = train(
            init_mlp([2, 16, 2], 2), data, None, TrainConfig(epochs=200, seed=2)
        )
        assert result.in_train_loss <= 0.01

    def test_augmented_requires_ood(self):
        data = make_dataset("gaussian_clusters", 30, 0.3, 1, num_classes=2)
        with pytest.raises(ValueError):
            train(init_mlp([2, 8, 3], 0), data, None, TrainConfig(mode="augmented"))

    def test_output_width_checked(self):
        data = make_dataset("gaussian_clusters", 30, 0.3, 1, num_classes=2)
        ood = make_ood_candidate("ring", data, 30, 2)
        with pytest.raises(ValueError):
            train(init_mlp([2, 8, 2], 0), data, ood,
                  TrainConfig(epochs=1, mode="augmented"))

    def test_augmented_rates_partition(self):
        data = make_dataset("gaussian_clusters", 90, 0.3, 3, num_classes=3)
        ood = make_ood_candidate("ring", data, 90, 4, margin=0.9)
        result = train(init_mlp([2, 16, 4], 5), data, ood,
                       TrainConfig(epochs=60, seed=5, mode="augmented"))
        ev = augmented_eval(
            predict_classes(result.net, data.points), data.labels,
            predict_classes(result.net, ood), num_classes=3,
        )
        assert ev.acc + ev.rej + ev.err == pytest.approx(1.0, abs=1e-12)
        assert result.ood_train_loss == pytest.approx(1.0 - ev.ood_rej, abs=1e-12)

    def test_calibrated_mode_trains(self):
        data = make_dataset("gaussian_clusters", 90, 0.3, 3, num_classes=3)
        ood = make_ood_candidate("ring", data, 90, 4, margin=0.9)
        result = train(init_mlp([2, 16, 3], 5), data, ood,
                       TrainConfig(epochs=60, seed=5, mode="calibrated", beta=0.5))
        assert result.ood_train_loss is None
        assert result.in_train_loss <= 0.1
        # uniform-target pressure: OOD confidence stays below in-dist confidence
        probs_ood, _ = forward(result.net, ood)
        probs_in, _ = forward(result.net, data.points)
        assert probs_ood.max(axis=1).mean() < probs_in.max(axis=1).mean()


class TestDatasets:
    def test_noise_free_moons_lie_on_half_circles(self):
        data = make_dataset("two_moons", 101, 0.0, 3)
        upper = data.points[data.labels == 0]
        lower = data.points[data.labels == 1]
        np.testing.assert_allclose(np.linalg.norm(upper, axis=1), 1.0, atol=1e-12)
        assert upper[:, 1].min() >= -1e-12
        np.testing.assert_allclose(
            np.linalg.norm(lower - np.array([1.0, 0.5]), axis=1), 1.0, atol=1e-12
        )
        assert lower[:, 1].max() <= 0.5 + 1e-12

    def test_same_seed_identical(self):
        a = make_dataset("two_moons", 50, 0.1, 9)
        b = make_dataset("two_moons", 50, 0.1, 9)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_balanced_labels(self):
        for n in (10, 11, 47):
            data = make_dataset("gaussian_clusters", n, 0.2, 1, num_classes=4)
            counts = np.bincount(data.labels, minlength=4)
            assert counts.max() - counts.min() <= 1
            assert counts.sum() == n

    def test_invalid_kind(self):
        with pytest.raises(ValueError):
            make_dataset("spiral", 10, 0.1, 0)

    def test_embedding_export_round_trip(self, tmp_path):
        data = make_dataset("two_moons", 30, 0.05, 2)
        emb = data.to_embedding_set("moons")
        save_embedding_set(emb, tmp_path / "moons.csv", "csv")
        loaded = load_embedding_set(tmp_path / "moons.csv")
        np.testing.assert_array_equal(loaded.labels, data.labels)
        np.testing.assert_allclose(loaded.vectors, data.points.astype(np.float32))


class TestOodCandidates:
    def _vanilla_setup(self):
        data = make_dataset("gaussian_clusters", 240, 0.3, 11, num_classes=4)
        net = train(init_mlp([2, 16, 16, 4], 11), data, None,
                    TrainConfig(epochs=120, seed=11)).net
        return data, net

    def test_ring_beats_blob_on_se_and_cr(self):
        data, net = self._vanilla_setup()
        in_embed = embed_with_predictions(net, data.points, "in", 4, data.labels)
        ring = make_ood_candidate("ring", data, 240, 3, margin=0.9)
        blob = make_ood_candidate("collapsed_blob", data, 240, 4, margin=0.9)
        rep_ring = metric_report(in_embed, embed_with_predictions(net, ring, "ring", 4), 4)
        rep_blob = metric_report(in_embed, embed_with_predictions(net, blob, "blob", 4), 4)
        assert rep_ring.se > rep_blob.se
        assert rep_ring.cr > rep_blob.cr

    def test_blob_collapses_onto_one_class(self):
        data, net = self._vanilla_setup()
        blob = make_ood_candidate("collapsed_blob", data, 240, 5, margin=0.9)
        preds = predict_classes(net, blob)
        top_share = np.bincount(preds, minlength=5).max() / preds.size
        assert top_share >= 0.95

    def test_noise_cloud_has_largest_distance(self):
        data = make_dataset("gaussian_clusters", 150, 0.3, 12, num_classes=3)
        in_embed = data.to_embedding_set("in")
        cds = {}
        for kind in ("ring", "collapsed_blob", "uniform_box", "noise_cloud"):
            pts = make_ood_candidate(kind, data, 150, 13, margin=0.9)
            probe = in_embed.__class__(
                name=kind, vectors=pts.astype(np.float32), num_classes=3,
                predicted=np.zeros(150, dtype=int),
            )
            cds[kind] = metric_report(in_embed, probe, 4).cd
        assert max(cds, key=cds.get) == "noise_cloud"

    def test_ring_sits_at_margin(self):
        data = make_dataset("gaussian_clusters", 150, 0.3, 14, num_classes=3)
        ring = make_ood_candidate("ring", data, 100, 15, margin=0.9)
        gaps = np.linalg.norm(
            ring[:, None, :] - data.points[None, :, :], axis=2
        ).min(axis=1)
        assert gaps.min() >= 0.95 * 0.9 - 1e-9
        assert gaps.max() <= 0.9 + 1e-9

    def test_invalid_kind(self):
        data = make_dataset("two_moons", 20, 0.1, 0)
        with pytest.raises(ValueError):
            make_ood_candidate("torus", data, 10, 0)


class TestSerialization:
    def test_mlp_round_trip_bit_exact(self, tmp_path):
        net = init_mlp([3, 7, 5, 4], 21)
        save_mlp(net, tmp_path / "net.bin")
        loaded = load_mlp(tmp_path / "net.bin")
        assert loaded.dims == net.dims
        for a, b in zip(net.weights, loaded.weights):
            assert a.tobytes() == b.tobytes()
        for a, b in zip(net.biases, loaded.biases):
            assert a.tobytes() == b.tobytes()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(ValueError):
            load_mlp(path)
