"""Merge per-region class predictions into one image-level prediction.

Regions are weighted by a softmax over sqrt(area)/temperature, so large
regions dominate and tiny over-detections barely move the image class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_distribution

STRATEGIES = ("avg", "score", "area")


@dataclass
class MergeConfig:
    tau_alpha: float = 100.0

    def __post_init__(self):
        if self.tau_alpha <= 0:
            raise ValueError(f"tau_alpha must be > 0, got {self.tau_alpha}")


def _softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    e = np.exp(shifted)
    return e / e.sum()


def _stack_predictions(predictions) -> np.ndarray:
    preds = [check_distribution(p) for p in predictions]
    if not preds:
        raise ValueError("merge requires at least one prediction")
    return np.stack(preds)


def merge_image(predictions, areas, cfg: MergeConfig | None = None):
    """Area-weighted merge: weights = softmax(sqrt(area) / tau_alpha).

    Returns (image_pred, weights). Zero-area regions get the minimum weight
    instead of being dropped.
    """
    cfg = cfg or MergeConfig()
    preds = _stack_predictions(predictions)
    areas = np.asarray(areas, dtype=np.float64)
    if areas.shape != (preds.shape[0],):
        raise ValueError("predictions and areas must have the same nonzero length")
    if (areas < 0).any():
        raise ValueError("areas must be non-negative")
    weights = _softmax(np.sqrt(areas) / cfg.tau_alpha)
    return weights @ preds, weights


def merge_baselines(predictions, areas, scores, strategy: str = "area",
                    cfg: MergeConfig | None = None) -> np.ndarray:
    """Merging ablations: (i) plain mean, (ii) softmax-of-score weights,
    (iii) the area-weighted merge."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    preds = _stack_predictions(predictions)
    if strategy == "avg":
        return preds.mean(axis=0)
    if strategy == "score":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (preds.shape[0],):
            raise ValueError("predictions and scores must have the same nonzero length")
        if scores.min() < 0 or scores.max() > 1:
            raise ValueError("scores must lie in [0, 1]")
        return _softmax(scores) @ preds
    merged, _ = merge_image(predictions, areas, cfg)
    return merged
