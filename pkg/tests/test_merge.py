import math

import numpy as np
import pytest

from mebinncd.merge import MergeConfig, merge_baselines, merge_image


def dist(*values):
    arr = np.asarray(values, dtype=np.float64)
    return arr / arr.sum()


class TestMergeImage:
    def test_single_region_passthrough(self):
        pred = dist(0.2, 0.3, 0.5)
        merged, weights = merge_image([pred], [144], MergeConfig())
        assert weights.tolist() == [1.0]
        assert np.allclose(merged, pred)

    def test_worked_example_areas_400_25(self):
        # independent evaluation: alpha_1 = e^0.20 / (e^0.20 + e^0.05)
        expected = math.exp(0.20) / (math.exp(0.20) + math.exp(0.05))
        _, weights = merge_image([dist(1, 0), dist(0, 1)], [400, 25], MergeConfig(tau_alpha=100))
        assert weights[0] == pytest.approx(expected, abs=1e-6)
        assert weights[0] == pytest.approx(0.5374, abs=1e-4)
        assert weights[1] == pytest.approx(1.0 - expected, abs=1e-6)

    def test_equal_areas_equal_weights(self):
        preds = [dist(1, 0, 0), dist(0, 1, 0), dist(0, 0, 1)]
        merged, weights = merge_image(preds, [50, 50, 50], MergeConfig())
        assert np.allclose(weights, 1 / 3)
        assert np.allclose(merged, np.mean(preds, axis=0))

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(1, 8))
            preds = [dist(*rng.random(4)) for _ in range(k)]
            areas = rng.integers(0, 2000, k)
            merged, weights = merge_image(preds, areas, MergeConfig(tau_alpha=float(rng.uniform(1, 200))))
            assert weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert merged.sum() == pytest.approx(1.0, abs=1e-9)
            assert (merged >= -1e-15).all()

    def test_strictly_monotone_in_area(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            areas = rng.choice(np.arange(1, 500), size=5, replace=False)
            preds = [dist(*rng.random(3)) for _ in range(5)]
            _, weights = merge_image(preds, areas, MergeConfig(tau_alpha=50))
            order = np.argsort(areas)
            assert (np.diff(weights[order]) > 0).all()

    def test_zero_area_keeps_minimum_weight(self):
        _, weights = merge_image([dist(1, 0), dist(0, 1)], [0, 100], MergeConfig())
        assert weights[0] > 0
        assert weights[0] < weights[1]

    def test_large_tau_approaches_uniform(self):
        preds = [dist(1, 0), dist(0, 1)]
        _, weights = merge_image(preds, [900, 4], MergeConfig(tau_alpha=1e9))
        assert np.allclose(weights, 0.5, atol=1e-6)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        preds = [dist(*rng.random(4)) for _ in range(4)]
        areas = [10, 400, 90, 250]
        merged, weights = merge_image(preds, areas, MergeConfig())
        perm = [2, 0, 3, 1]
        merged_p, weights_p = merge_image([preds[i] for i in perm], [areas[i] for i in perm],
                                          MergeConfig())
        assert np.allclose(weights_p, weights[perm])
        assert np.allclose(merged_p, merged)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            merge_image([], [], MergeConfig())

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            merge_image([dist(1, 0)], [10, 20], MergeConfig())


class TestMergeBaselines:
    def test_all_strategies_coincide_for_single_region(self):
        pred = dist(0.1, 0.9)
        outs = [merge_baselines([pred], [30], [0.5], strategy=s) for s in ("avg", "score", "area")]
        for out in outs:
            assert np.allclose(out, pred)

    def test_avg_is_elementwise_mean(self):
        preds = [dist(1, 0), dist(0, 1)]
        out = merge_baselines(preds, [10, 20], [0.2, 0.9], strategy="avg")
        assert np.allclose(out, [0.5, 0.5])

    def test_score_weighting_favors_high_score(self):
        preds = [dist(1, 0), dist(0, 1)]
        out = merge_baselines(preds, [10, 10], [0.9, 0.1], strategy="score")
        expected_w0 = math.exp(0.9) / (math.exp(0.9) + math.exp(0.1))
        assert out[0] == pytest.approx(expected_w0, abs=1e-12)
        assert out[0] > out[1]

    def test_area_strategy_matches_merge_image(self):
        preds = [dist(0.6, 0.4), dist(0.3, 0.7)]
        out = merge_baselines(preds, [400, 25], [0.5, 0.5], strategy="area",
                              cfg=MergeConfig(tau_alpha=100))
        expected, _ = merge_image(preds, [400, 25], MergeConfig(tau_alpha=100))
        assert np.allclose(out, expected)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            merge_baselines([dist(1, 0)], [1], [0.5], strategy="median")


def test_config_validation():
    with pytest.raises(ValueError):
        MergeConfig(tau_alpha=0.0)
