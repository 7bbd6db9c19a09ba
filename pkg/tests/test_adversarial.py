"""FGS adversary generation and the noise sweep."""

import numpy as np
import pytest

from oodprotect.adversarial import (
    FgsBatch,
    adversary_sweep,
    default_input_box,
    fgs_attack,
    fgs_batch,
)
from oodprotect.toynet import (
    TrainConfig,
    init_mlp,
    input_gradients,
    loss_and_grads,
    make_dataset,
    make_ood_candidate,
    predict_classes,
    train,
)


def _setup(seed=0, n=120, num_classes=3, epochs=60):
    data = make_dataset("gaussian_clusters", n, 0.3, seed, num_classes=num_classes)
    net = train(
        init_mlp([2, 12, num_classes], seed + 1),
        data,
        None,
        TrainConfig(epochs=epochs, seed=seed + 1),
    ).net
    return data, net, default_input_box(data.points)


class TestFgsAttack:
    def test_alpha_zero_is_identity(self):
        data, net, box = _setup()
        out = fgs_attack(net, data.points, data.labels, 0.0, box)
        np.testing.assert_array_equal(out, data.points)

    def test_interior_points_move_exactly_alpha_in_max_norm(self):
        data, net, box = _setup()
        alpha = 0.05  # small enough that no coordinate clips
        out = fgs_attack(net, data.points, data.labels, alpha, box)
        moved = np.abs(out - data.points).max(axis=1)
        grads = input_gradients(net, data.points, data.labels)
        nonzero = np.all(grads != 0.0, axis=1)
        assert nonzero.mean() > 0.9
        np.testing.assert_allclose(moved[nonzero], alpha, rtol=0, atol=1e-15)

    def test_first_order_ascent(self):
        """A small signed step should not decrease the surrogate loss."""
        data, net, box = _setup(seed=3)
        perturbed = fgs_attack(net, data.points, data.labels, 0.01, box)
        increased = 0
        for x0, x1, y in zip(data.points, perturbed, data.labels):
            before, _, _ = loss_and_grads(net, x0[None, :], np.array([y]), None, "vanilla")
            after, _, _ = loss_and_grads(net, x1[None, :], np.array([y]), None, "vanilla")
            increased += after >= before - 1e-12
        assert increased / len(data) >= 0.95

    def test_clipping_respects_box(self):
        data, net, _ = _setup(seed=4)
        lo = data.points.min(axis=0)
        hi = data.points.max(axis=0)
        out = fgs_attack(net, data.points, data.labels, 50.0, (lo, hi))
        assert np.all(out >= lo) and np.all(out <= hi)
        assert np.abs(out - data.points).max() <= 50.0 + 1e-12

    def test_single_vector_shape(self):
        data, net, box = _setup(seed=5)
        out = fgs_attack(net, data.points[0], data.labels[0], 0.1, box)
        assert out.shape == (2,)

    def test_point_outside_box_rejected(self):
        data, net, _ = _setup(seed=6)
        tight = (data.points.min(axis=0) + 1.0, data.points.max(axis=0))
        with pytest.raises(ValueError):
            fgs_attack(net, data.points, data.labels, 0.1, tight)

    def test_negative_alpha_rejected(self):
        data, net, box = _setup(seed=7)
        with pytest.raises(ValueError):
            fgs_attack(net, data.points, data.labels, -0.1, box)


class TestInputGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        net = init_mlp([3, 10, 4], 8)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 4, 6)
        analytic = input_gradients(net, x, y)
        h = 1e-6
        for i in range(6):
            for j in range(3):
                for sign in (1,):
                    xp, xm = x.copy(), x.copy()
                    xp[i, j] += h
                    xm[i, j] -= h
                    lp, _, _ = loss_and_grads(net, xp[i : i + 1], y[i : i + 1], None, "vanilla")
                    lm, _, _ = loss_and_grads(net, xm[i : i + 1], y[i : i + 1], None, "vanilla")
                    fd = (lp - lm) / (2 * h)
                    assert abs(analytic[i, j] - fd) < 1e-6 * max(1.0, abs(fd))


class TestFgsBatch:
    def test_invariant_enforced(self):
        originals = np.zeros((2, 2))
        bad = np.full((2, 2), 0.2)
        with pytest.raises(ValueError):
            FgsBatch(originals=originals, perturbed=bad, alpha=0.1, surrogate_id="s")

    def test_builder(self):
        data, net, box = _setup(seed=9)
        batch = fgs_batch(net, data.points, data.labels, 0.2, box, "probe")
        assert batch.alpha == 0.2
        assert batch.surrogate_id == "probe"
        assert np.abs(batch.perturbed - batch.originals).max() <= 0.2 + 1e-12


class TestAdversarySweep:
    def _victims(self, seed=10):
        data = make_dataset("gaussian_clusters", 150, 0.3, seed, num_classes=3)
        surrogate = train(init_mlp([2, 12, 3], seed + 1), data, None,
                          TrainConfig(epochs=80, seed=seed + 1)).net
        vanilla = train(init_mlp([2, 12, 3], seed + 2), data, None,
                        TrainConfig(epochs=80, seed=seed + 2)).net
        ring = make_ood_candidate("ring", data, 150, seed + 3, margin=0.9)
        augmented = train(init_mlp([2, 12, 4], seed + 4), data, ring,
                          TrainConfig(epochs=80, seed=seed + 4, mode="augmented")).net
        return data, surrogate, vanilla, augmented, ring

    def test_alpha_zero_row_equals_clean_eval(self):
        data, surrogate, vanilla, augmented, ring = self._victims()
        report = adversary_sweep(surrogate, vanilla, augmented, data, [0.0, 0.3], k=4)
        clean_vanilla = float(np.mean(predict_classes(vanilla, data.points) != data.labels))
        aug_preds = predict_classes(augmented, data.points)
        clean_rej = float(np.mean(aug_preds == 3))
        row = report.rows[0]
        assert row.vanilla_err == clean_vanilla
        assert row.aug_rej == clean_rej

    def test_train_ood_cd_reported(self):
        data, surrogate, vanilla, augmented, ring = self._victims(seed=20)
        report = adversary_sweep(
            surrogate, vanilla, augmented, data, [0.0, 0.2], k=4, train_ood_points=ring
        )
        assert report.train_ood_cd is not None and report.train_ood_cd > 0.0

    def test_perturbation_bound_holds_across_alphas(self):
        data, surrogate, vanilla, augmented, _ = self._victims(seed=30)
        box = default_input_box(data.points)
        for alpha in (0.1, 0.5, 2.0):
            batch = fgs_batch(surrogate, data.points, data.labels, alpha, box)
            assert np.abs(batch.perturbed - batch.originals).max() <= alpha + 1e-12

    def test_unsorted_alphas_rejected(self):
        data, surrogate, vanilla, augmented, _ = self._victims(seed=40)
        with pytest.raises(ValueError):
            adversary_sweep(surrogate, vanilla, augmented, data, [0.2, 0.1])

    def test_empty_alphas_rejected(self):
        data, surrogate, vanilla, augmented, _ = self._victims(seed=40)
        with pytest.raises(ValueError):
            adversary_sweep(surrogate, vanilla, augmented, data, [])

    def test_surrogate_must_differ_from_victim(self):
        data, surrogate, vanilla, augmented, _ = self._victims(seed=40)
        with pytest.raises(ValueError):
            adversary_sweep(vanilla, vanilla, augmented, data, [0.0])

    def test_csv_shape(self):
        data, surrogate, vanilla, augmented, _ = self._victims(seed=40)
        report = adversary_sweep(surrogate, vanilla, augmented, data, [0.0, 0.1])
        lines = report.to_csv().splitlines()
        assert lines[0] == "alpha,vanilla_err,aug_err,aug_rej,cd"
        assert len(lines) == 3
        assert all(len(line.split(",")) == 5 for line in lines[1:])
