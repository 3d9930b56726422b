import numpy as np
import pytest

from mebinncd.mebin import (
    DegenerateHistogramError,
    MainElementBinarizer,
    MebinConfig,
    ThresholdRange,
    binarize,
    compute_threshold_range,
    fixed_threshold_binarize,
    otsu_threshold,
)
from tests.test_raster import flood_fill_components, window_min_erode


def sweep_oracle(anomaly_map, s_min, s_max, num_thresholds, erosion_radius, connectivity):
    """Independent reference for the threshold sweep: pure-python thresholds,
    window-scan erosion, flood-fill counting."""
    counts = []
    for j in range(num_thresholds):
        eps = s_min + (s_max - s_min) * j / (num_thresholds - 1)
        mask = (anomaly_map > eps).astype(np.uint8)
        for _ in range(erosion_radius):
            mask = window_min_erode(mask, 1)
        counts.append(flood_fill_components(mask, connectivity)[1])
    return counts


class TestComputeThresholdRange:
    def test_min_of_maxima(self):
        maps = [np.full((2, 2), v, dtype=np.float32) for v in (0.9, 0.5, 0.7)]
        out = compute_threshold_range(maps)
        assert out.s_min == pytest.approx(0.5)
        assert out.s_max == 1.0

    def test_all_zero_map(self):
        out = compute_threshold_range([np.zeros((3, 3), dtype=np.float32)])
        assert (out.s_min, out.s_max) == (0.0, 1.0)

    def test_empty_input(self):
        with pytest.raises(ValueError):
            compute_threshold_range([])

    def test_matches_full_scan_oracle(self):
        rng = np.random.default_rng(0)
        maps = [rng.random((8, 8)).astype(np.float32) for _ in range(50)]
        expected = min(max(float(v) for v in m.ravel()) for m in maps)
        assert compute_threshold_range(maps).s_min == pytest.approx(expected, abs=1e-12)


class TestBinarize:
    def test_single_plateau(self):
        amap = np.zeros((10, 10), dtype=np.float32)
        amap[3:7, 3:7] = 0.9
        cfg = MebinConfig(num_thresholds=64, min_stable_run=4, erosion_radius=0)
        out = binarize(amap, ThresholdRange(0.5, 1.0), cfg)
        oracle = sweep_oracle(amap, 0.5, 1.0, 64, 0, 8)
        assert out.per_threshold_counts == oracle
        # delta stays 1 while eps < 0.9: indices 0..50 inclusive
        assert sum(1 for c in oracle if c == 1) == 51
        assert out.selected_threshold == pytest.approx(0.5)
        assert np.array_equal(out.mask, (amap > 0.5).astype(np.uint8))
        assert out.region_count == 1

    def test_two_plateaus_mode_selects_longer_run(self):
        amap = np.zeros((16, 16), dtype=np.float32)
        amap[2:6, 2:6] = 0.9
        amap[10:14, 10:14] = 0.6
        cfg = MebinConfig(num_thresholds=64, min_stable_run=4, erosion_radius=0)
        out = binarize(amap, ThresholdRange(0.5, 1.0), cfg)
        oracle = sweep_oracle(amap, 0.5, 1.0, 64, 0, 8)
        assert out.per_threshold_counts == oracle
        # the count 1 (only the 0.9 block) spans more thresholds than 2
        assert sum(1 for c in oracle if c == 1) > sum(1 for c in oracle if c == 2)
        expected_first = next(
            0.5 + 0.5 * j / 63 for j, c in enumerate(oracle) if c == 1
        )
        assert out.selected_threshold == pytest.approx(expected_first)
        got = out.mask.astype(bool)
        assert got[3, 3] and not got[11, 11]

    def test_maximum_equals_smin_gives_empty(self):
        amap = np.full((6, 6), 0.5, dtype=np.float32)
        out = binarize(amap, ThresholdRange(0.5, 1.0), MebinConfig(erosion_radius=0))
        assert out.selected_threshold is None
        assert out.region_count == 0
        assert not out.mask.any()
        assert all(c == 0 for c in out.per_threshold_counts)

    def test_run_shorter_than_tau_gives_empty(self):
        # plateau occupies ~3 of 64 sampled thresholds, below the default run length 4
        amap = np.zeros((8, 8), dtype=np.float32)
        amap[2:6, 2:6] = 0.04
        cfg = MebinConfig(num_thresholds=64, min_stable_run=4, erosion_radius=0)
        out = binarize(amap, ThresholdRange(0.0, 1.0), cfg)
        assert sum(1 for c in out.per_threshold_counts if c == 1) == 3
        assert out.selected_threshold is None

    def test_defaults_match_reference_settings(self):
        cfg = MebinConfig()
        assert cfg.num_thresholds == 64
        assert cfg.min_stable_run == 4
        assert cfg.erosion_radius == 1
        assert cfg.connectivity == 8

    def test_mask_equals_fixed_threshold_at_selected(self):
        rng = np.random.default_rng(1)
        cfg = MebinConfig()
        for _ in range(10):
            amap = np.zeros((20, 20), dtype=np.float32)
            y, x = rng.integers(2, 10, 2)
            amap[y : y + 8, x : x + 8] = rng.uniform(0.6, 1.0)
            out = binarize(amap, ThresholdRange(0.2, 1.0), cfg)
            if out.selected_threshold is None:
                continue
            assert np.array_equal(
                out.mask, fixed_threshold_binarize(amap, out.selected_threshold, cfg)
            )
            assert out.region_count == 1

    def test_monotonic_threshold_shrinks_mask(self):
        rng = np.random.default_rng(2)
        amap = rng.random((12, 12)).astype(np.float32)
        low = amap > 0.3
        high = amap > 0.7
        assert np.all(low[high])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        amap = rng.random((16, 16)).astype(np.float32)
        cfg = MebinConfig()
        a = binarize(amap, ThresholdRange(0.1, 1.0), cfg)
        b = binarize(amap, ThresholdRange(0.1, 1.0), cfg)
        assert a.selected_threshold == b.selected_threshold
        assert np.array_equal(a.mask, b.mask)
        assert a.per_threshold_counts == b.per_threshold_counts


class TestFixedThreshold:
    def test_epsilon_one_gives_empty(self):
        amap = np.random.default_rng(4).random((8, 8)).astype(np.float32)
        assert not fixed_threshold_binarize(amap, 1.0, MebinConfig(erosion_radius=0)).any()

    def test_epsilon_zero_on_positive_map(self):
        amap = np.full((8, 8), 0.4, dtype=np.float32)
        out = fixed_threshold_binarize(amap, 0.0, MebinConfig(erosion_radius=1))
        from mebinncd.raster import erode

        assert np.array_equal(out, erode(np.ones((8, 8), dtype=np.uint8), 1))

    def test_baseline_sweep_values_valid(self):
        amap = np.random.default_rng(5).random((8, 8)).astype(np.float32)
        for eps in (0.1, 0.3, 0.5, 0.7, 0.9):
            fixed_threshold_binarize(amap, eps, MebinConfig())


def otsu_oracle(anomaly_map):
    """Brute-force scan: recompute class weights/means per threshold from scratch."""
    bins = np.rint(np.asarray(anomaly_map, dtype=np.float64) * 255).astype(int).ravel()
    best_t, best_var = None, -1.0
    for t in range(256):
        lo = bins[bins <= t]
        hi = bins[bins > t]
        if len(lo) == 0 or len(hi) == 0:
            continue
        w0, w1 = len(lo) / len(bins), len(hi) / len(bins)
        var = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if var > best_var + 1e-12:
            best_var, best_t = var, t
    return best_t / 255.0


class TestOtsu:
    def test_bimodal_threshold_between_modes(self):
        amap = np.zeros((4, 4), dtype=np.float32)
        amap[:2] = 0.1
        amap[2:] = 0.9
        t = otsu_threshold(amap)
        assert 0.1 < t < 0.9

    def test_constant_map_raises(self):
        with pytest.raises(DegenerateHistogramError):
            otsu_threshold(np.full((4, 4), 0.25, dtype=np.float32))

    def test_matches_bruteforce_scan(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            amap = rng.random((10, 10)).astype(np.float32)
            assert otsu_threshold(amap) == pytest.approx(otsu_oracle(amap), abs=1e-12)


class TestMainElementBinarizer:
    def test_fit_transform(self):
        rng = np.random.default_rng(7)
        maps = [np.zeros((16, 16), dtype=np.float32)]  # normal image anchors s_min at 0
        for _ in range(6):
            amap = np.zeros((16, 16), dtype=np.float32)
            y, x = rng.integers(2, 8, 2)
            amap[y : y + 6, x : x + 6] = rng.uniform(0.7, 1.0)
            maps.append(amap)
        est = MainElementBinarizer(erosion_radius=0)
        results = est.fit(maps).transform(maps)
        assert len(results) == len(maps)
        assert est.threshold_range_.s_min == 0.0
        assert est.threshold_range_.s_max == 1.0
        assert results[0].region_count == 0
        assert all(r.region_count == 1 for r in results[1:])

    def test_get_params_roundtrip(self):
        est = MainElementBinarizer(num_thresholds=32)
        params = est.get_params()
        assert params["num_thresholds"] == 32
        est.set_params(min_stable_run=6)
        assert est.min_stable_run == 6

    def test_transform_before_fit(self):
        with pytest.raises(RuntimeError):
            MainElementBinarizer().transform([np.zeros((4, 4), dtype=np.float32)])


class TestConfigValidation:
    def test_bad_threshold_count(self):
        with pytest.raises(ValueError):
            MebinConfig(num_thresholds=1)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            ThresholdRange(0.8, 0.2)
        with pytest.raises(ValueError):
            ThresholdRange(-0.1, 1.0)
