"""Input validation helpers shared across the toolkit.

All checkers return the array cast to its canonical dtype so callers can
validate and normalize in one step, mirroring sklearn's ``check_array``.
"""

from __future__ import annotations

import numpy as np

PROB_TOL = 1e-9


def check_anomaly_map(arr) -> np.ndarray:
    """Validate a per-pixel anomaly probability raster (2-D, values in [0, 1])."""
    out = np.asarray(arr, dtype=np.float32)
    if out.ndim != 2 or out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"anomaly map must be a non-empty 2-D array, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError("anomaly map contains non-finite values")
    if out.min() < 0.0 or out.max() > 1.0:
        raise ValueError(
            f"anomaly map values must lie in [0, 1], got [{out.min()}, {out.max()}]"
        )
    return out


def check_binary_mask(arr) -> np.ndarray:
    """Validate a 0/1 raster and return it as uint8."""
    out = np.asarray(arr)
    if out.ndim != 2 or out.size == 0:
        raise ValueError(f"binary mask must be a non-empty 2-D array, got shape {out.shape}")
    if out.dtype == bool:
        return out.astype(np.uint8)
    out = out.astype(np.uint8, copy=False)
    bad = (out != 0) & (out != 1)
    if bad.any():
        raise ValueError("binary mask values must be exactly 0 or 1")
    return out


def check_gray_image(arr) -> np.ndarray:
    """Validate a single-channel 8-bit image."""
    out = np.asarray(arr)
    if out.ndim != 2 or out.size == 0:
        raise ValueError(f"gray image must be a non-empty 2-D array, got shape {out.shape}")
    if out.dtype != np.uint8:
        if np.issubdtype(out.dtype, np.integer) and out.min() >= 0 and out.max() <= 255:
            out = out.astype(np.uint8)
        else:
            raise ValueError(f"gray image must be 8-bit, got dtype {out.dtype}")
    return out


def check_same_shape(*arrays) -> None:
    shapes = {np.asarray(a).shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"arrays must share one shape, got {sorted(shapes)}")


def check_distribution(vec, tol: float = PROB_TOL) -> np.ndarray:
    """Validate a probability vector (non-negative, sums to 1 within ``tol``)."""
    out = np.asarray(vec, dtype=np.float64)
    if out.ndim != 1 or out.size == 0:
        raise ValueError("class distribution must be a non-empty 1-D vector")
    if out.min() < -tol:
        raise ValueError(f"class distribution has negative entries (min {out.min()})")
    total = out.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"class distribution must sum to 1, got {total}")
    return out


def check_probability(value, name: str = "probability") -> float:
    out = float(value)
    if not 0.0 <= out <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {out}")
    return out
