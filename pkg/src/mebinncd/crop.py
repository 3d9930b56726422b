"""Region-centered square cropping of images and masks.

Each connected region of a mask produces one record: a square crop of the
source image and mask, padded around the region's bounding square and floored
at a fraction of the image side. Boxes that would leave the image are shifted
inward before any shrinking, so crops stay square and in bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import cv2
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .raster import connected_components
from .validation import check_anomaly_map, check_binary_mask, check_gray_image, check_same_shape

DEFAULT_PADDING_FRAC = 0.10
DEFAULT_MIN_SIZE_FRAC = 0.01


@dataclass
class SubImageRecord:
    """One cropped anomaly region.

    ``anomaly_score`` is the map maximum over the region's own pixels (never
    the padding background) and ``area`` is the region's source-resolution
    pixel count; both are invariant under later resizing.
    """

    image_id: str
    region_index: int
    sub_image: np.ndarray
    sub_mask: np.ndarray
    anomaly_score: float
    area: int
    crop_box: tuple[int, int, int, int]
    label: int | None = None


def crop_regions(
    image,
    mask,
    anomaly_map=None,
    padding_frac: float = DEFAULT_PADDING_FRAC,
    min_size_frac: float = DEFAULT_MIN_SIZE_FRAC,
    image_id: str = "",
) -> list[SubImageRecord]:
    """Extract one record per connected region of ``mask``.

    When no anomaly map is given (e.g. ground-truth-labeled data) the score
    defaults to 1.0. An empty mask yields an empty list.
    """
    image = check_gray_image(image)
    mask = check_binary_mask(mask)
    if anomaly_map is not None:
        anomaly_map = check_anomaly_map(anomaly_map)
        check_same_shape(image, mask, anomaly_map)
    else:
        check_same_shape(image, mask)
    if padding_frac < 0:
        raise ValueError(f"padding_frac must be >= 0, got {padding_frac}")
    if not 0 < min_size_frac <= 1:
        raise ValueError(f"min_size_frac must be in (0, 1], got {min_size_frac}")

    height, width = mask.shape
    min_side = max(1, math.ceil(min_size_frac * min(width, height)))
    regions = connected_components(mask, connectivity=8)

    records = []
    for idx in range(regions.count):
        min_x, min_y, max_x, max_y = (int(v) for v in regions.boxes[idx])
        x0, y0, side = _square_box(
            min_x, min_y, max_x, max_y, padding_frac, min_side, width, height
        )
        component = regions.labels == idx + 1
        if anomaly_map is not None:
            score = float(anomaly_map[component].max())
        else:
            score = 1.0
        sub_mask = component[y0 : y0 + side, x0 : x0 + side].astype(np.uint8)
        records.append(
            SubImageRecord(
                image_id=image_id,
                region_index=idx,
                sub_image=image[y0 : y0 + side, x0 : x0 + side].copy(),
                sub_mask=sub_mask,
                anomaly_score=score,
                area=int(regions.areas[idx]),
                crop_box=(x0, y0, x0 + side - 1, y0 + side - 1),
            )
        )
    return records


def _square_box(min_x, min_y, max_x, max_y, padding_frac, min_side, width, height):
    """Square crop geometry: pad the bounding square, floor its size, clip by shifting."""
    span = max(max_x - min_x + 1, max_y - min_y + 1)
    side = math.ceil(span * (1.0 + 2.0 * padding_frac))
    side = max(side, min_side)
    side = min(side, width, height)
    x0 = (min_x + max_x + 1 - side) // 2
    y0 = (min_y + max_y + 1 - side) // 2
    x0 = min(max(x0, 0), width - side)
    y0 = min(max(y0, 0), height - side)
    return x0, y0, side


def resize_to_model(record: SubImageRecord, side: int) -> SubImageRecord:
    """Resize a record's crop to ``side`` pixels per edge.

    The image is resampled bilinearly, the mask with nearest-neighbor so it
    stays binary. Score, area and crop_box keep their source-resolution
    meaning.
    """
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    if record.sub_image.shape == (side, side):
        return replace(record, sub_image=record.sub_image.copy(), sub_mask=record.sub_mask.copy())
    image = cv2.resize(record.sub_image, (side, side), interpolation=cv2.INTER_LINEAR)
    mask = cv2.resize(record.sub_mask, (side, side), interpolation=cv2.INTER_NEAREST)
    return replace(record, sub_image=image, sub_mask=mask)


class RegionCropper(BaseEstimator, TransformerMixin):
    """Stateless transformer from (image, mask[, map][, image_id]) tuples to records."""

    def __init__(self, padding_frac=DEFAULT_PADDING_FRAC, min_size_frac=DEFAULT_MIN_SIZE_FRAC,
                 resize_side=None):
        self.padding_frac = padding_frac
        self.min_size_frac = min_size_frac
        self.resize_side = resize_side

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> list[SubImageRecord]:
        out = []
        for item in X:
            image, mask = item[0], item[1]
            anomaly_map = item[2] if len(item) > 2 else None
            image_id = item[3] if len(item) > 3 else ""
            records = crop_regions(
                image,
                mask,
                anomaly_map,
                padding_frac=self.padding_frac,
                min_size_frac=self.min_size_frac,
                image_id=image_id,
            )
            if self.resize_side is not None:
                records = [resize_to_model(r, self.resize_side) for r in records]
            out.extend(records)
        return out
