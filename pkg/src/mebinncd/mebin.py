"""Main element binarization: adaptive per-image thresholding of anomaly maps.

The selection rule sweeps a grid of thresholds over a corpus-derived range,
counts connected components of each (eroded) thresholded mask, finds the
component count that is stable over the most thresholds, and keeps the lowest
threshold of the longest stable run. Images whose counts never stabilize long
enough yield an empty mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .raster import connected_components, erode
from .validation import check_anomaly_map, check_probability


class DegenerateHistogramError(ValueError):
    """Raised when a map is constant and no separating threshold exists."""


@dataclass
class MebinConfig:
    num_thresholds: int = 64
    min_stable_run: int = 4
    erosion_radius: int = 1
    connectivity: int = 8

    def __post_init__(self):
        if self.num_thresholds < 2:
            raise ValueError(f"num_thresholds must be >= 2, got {self.num_thresholds}")
        if self.min_stable_run < 1:
            raise ValueError(f"min_stable_run must be >= 1, got {self.min_stable_run}")
        if self.erosion_radius < 0:
            raise ValueError(f"erosion_radius must be >= 0, got {self.erosion_radius}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


@dataclass
class ThresholdRange:
    s_min: float
    s_max: float

    def __post_init__(self):
        self.s_min = check_probability(self.s_min, "s_min")
        self.s_max = check_probability(self.s_max, "s_max")
        if self.s_min > self.s_max:
            raise ValueError(f"s_min {self.s_min} exceeds s_max {self.s_max}")


@dataclass
class MebinResult:
    mask: np.ndarray
    selected_threshold: float | None
    region_count: int
    per_threshold_counts: list[int] = field(default_factory=list)


def compute_threshold_range(maps) -> ThresholdRange:
    """Threshold exploration range for a corpus of anomaly maps.

    The upper limit is 1; the lower limit is the smallest per-map maximum,
    which keeps every map's strongest response inside the swept range.
    """
    maxima = [float(check_anomaly_map(m).max()) for m in maps]
    if not maxima:
        raise ValueError("compute_threshold_range requires at least one map")
    return ThresholdRange(s_min=min(maxima), s_max=1.0)


def binarize(anomaly_map, threshold_range: ThresholdRange, cfg: MebinConfig | None = None) -> MebinResult:
    """Select a stable threshold for one map and return its binary mask.

    Comparison is strict (`map > threshold`), so a map whose maximum equals
    the range's lower bound produces an empty result.
    """
    cfg = cfg or MebinConfig()
    arr = check_anomaly_map(anomaly_map)
    thresholds = np.linspace(threshold_range.s_min, threshold_range.s_max, cfg.num_thresholds)
    counts = []
    for eps in thresholds:
        mask = erode((arr > eps).astype(np.uint8), cfg.erosion_radius)
        counts.append(connected_components(mask, cfg.connectivity).count)

    modal = _modal_nonzero_count(counts)
    if modal is None:
        return _empty_result(arr.shape, counts)
    start, length = _longest_run(counts, modal)
    if length < cfg.min_stable_run:
        return _empty_result(arr.shape, counts)
    selected = float(thresholds[start])
    mask = fixed_threshold_binarize(arr, selected, cfg)
    region_count = connected_components(mask, cfg.connectivity).count
    return MebinResult(
        mask=mask,
        selected_threshold=selected,
        region_count=region_count,
        per_threshold_counts=counts,
    )


def fixed_threshold_binarize(anomaly_map, epsilon: float, cfg: MebinConfig | None = None) -> np.ndarray:
    """Strict-threshold baseline: erode(1[map > epsilon])."""
    cfg = cfg or MebinConfig()
    arr = check_anomaly_map(anomaly_map)
    epsilon = check_probability(epsilon, "epsilon")
    return erode((arr > epsilon).astype(np.uint8), cfg.erosion_radius)


def otsu_threshold(anomaly_map) -> float:
    """Between-class-variance-maximizing threshold over a 256-bin quantization.

    Ties are broken toward the lower threshold. Raises
    DegenerateHistogramError for constant maps.
    """
    arr = check_anomaly_map(anomaly_map)
    bins = np.rint(arr.astype(np.float64) * 255.0).astype(np.int64).ravel()
    hist = np.bincount(bins, minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogramError("map has fewer than 2 distinct quantized values")
    p = hist / hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(p)
    mu0_mass = np.cumsum(p * levels)
    mu_total = mu0_mass[-1]
    w1 = 1.0 - w0
    valid = (w0 > 0.0) & (w1 > 0.0)
    between = np.zeros(256, dtype=np.float64)
    between[valid] = (mu_total * w0[valid] - mu0_mass[valid]) ** 2 / (w0[valid] * w1[valid])
    best = int(np.argmax(between))  # argmax keeps the first (lowest) maximizer
    return best / 255.0


def _empty_result(shape, counts) -> MebinResult:
    return MebinResult(
        mask=np.zeros(shape, dtype=np.uint8),
        selected_threshold=None,
        region_count=0,
        per_threshold_counts=counts,
    )


def _modal_nonzero_count(counts) -> int | None:
    """Most frequent nonzero component count; ties prefer the smaller count."""
    freq = {}
    for c in counts:
        if c > 0:
            freq[c] = freq.get(c, 0) + 1
    if not freq:
        return None
    return min(freq, key=lambda c: (-freq[c], c))


def _longest_run(counts, value) -> tuple[int, int]:
    """Longest maximal run of `value`; equal lengths resolve to the earliest run."""
    best_start, best_len = 0, 0
    i, n = 0, len(counts)
    while i < n:
        if counts[i] != value:
            i += 1
            continue
        j = i
        while j < n and counts[j] == value:
            j += 1
        if j - i > best_len:
            best_start, best_len = i, j - i
        i = j
    return best_start, best_len


class MainElementBinarizer(BaseEstimator, TransformerMixin):
    """Corpus-adaptive binarizer with a fit/transform interface.

    ``fit`` scans the corpus once to derive the threshold range, ``transform``
    runs the per-image selection. Images are independent after ``fit``.
    """

    def __init__(self, num_thresholds=64, min_stable_run=4, erosion_radius=1, connectivity=8):
        self.num_thresholds = num_thresholds
        self.min_stable_run = min_stable_run
        self.erosion_radius = erosion_radius
        self.connectivity = connectivity

    def _config(self) -> MebinConfig:
        return MebinConfig(
            num_thresholds=self.num_thresholds,
            min_stable_run=self.min_stable_run,
            erosion_radius=self.erosion_radius,
            connectivity=self.connectivity,
        )

    def fit(self, X, y=None):
        """Derive the threshold range from the corpus of anomaly maps ``X``."""
        self._config()
        self.threshold_range_ = compute_threshold_range(X)
        return self

    def transform(self, X) -> list[MebinResult]:
        if not hasattr(self, "threshold_range_"):
            raise RuntimeError("MainElementBinarizer must be fitted before transform")
        cfg = self._config()
        return [binarize(m, self.threshold_range_, cfg) for m in X]
