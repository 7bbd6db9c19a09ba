"""Experiment helpers; full experiment claims are exercised in the acceptance suite."""

import numpy as np
import pytest
import scipy.stats

from oodprotect.experiments import (
    embed_with_predictions,
    far_probe_points,
    run_ranking_experiment,
    spearman_rank_correlation,
)
from oodprotect.toynet import TrainConfig, init_mlp, make_dataset, train


class TestSpearman:
    def test_matches_scipy_on_permutations(self):
        rng = np.random.default_rng(0)
        items = [f"c{i}" for i in range(6)]
        for _ in range(25):
            a = list(rng.permutation(items))
            b = list(rng.permutation(items))
            mine = spearman_rank_correlation(a, b)
            ref = scipy.stats.spearmanr(
                [a.index(x) for x in items], [b.index(x) for x in items]
            ).statistic
            assert mine == pytest.approx(ref, abs=1e-12)

    def test_identical_orders(self):
        assert spearman_rank_correlation(["a", "b", "c"], ["a", "b", "c"]) == 1.0

    def test_reversed_orders(self):
        assert spearman_rank_correlation(["a", "b", "c"], ["c", "b", "a"]) == -1.0

    def test_mismatched_items_rejected(self):
        with pytest.raises(ValueError):
            spearman_rank_correlation(["a"], ["b"])


class TestFarProbes:
    def test_probes_are_far_and_deterministic(self):
        data = make_dataset("two_moons", 80, 0.05, 1)
        probes = far_probe_points(data, 50, 7)
        again = far_probe_points(data, 50, 7)
        np.testing.assert_array_equal(probes, again)
        centroid = data.points.mean(axis=0)
        data_radius = np.linalg.norm(data.points - centroid, axis=1).max()
        probe_dist = np.linalg.norm(probes - centroid, axis=1)
        assert probes.shape == (50, 2)
        assert probe_dist.min() > 2.0 * data_radius


class TestEmbedWithPredictions:
    def test_shapes_and_prediction_consistency(self):
        data = make_dataset("gaussian_clusters", 60, 0.3, 2, num_classes=3)
        net = train(init_mlp([2, 8, 3], 2), data, None,
                    TrainConfig(epochs=30, seed=2)).net
        emb = embed_with_predictions(net, data.points, "probe", 3, data.labels)
        assert emb.vectors.shape == (60, 8)
        assert emb.vectors.dtype == np.float32
        assert emb.predicted.max() < 3
        np.testing.assert_array_equal(emb.labels, data.labels)


class TestRankingExperimentShape:
    def test_small_run_is_consistent(self):
        result = run_ranking_experiment(seed=1, n=120, m_ood=120, epochs=40)
        assert sorted(result.metric_order) == sorted(result.oracle_order)
        assert set(result.outcomes) == set(result.metric_order)
        assert result.gap_winner in result.metric_order
        for outcome in result.outcomes.values():
            assert 0.0 <= outcome.mean_unseen_rejection <= 1.0
            assert outcome.gap.objective >= 0.0
        assert -1.0 <= result.spearman <= 1.0
        summary = result.summary()
        assert summary["metric_winner"] == result.metric_order[0]
