"""Raster primitives: map/mask/image file I/O, connected components, erosion.

Two on-disk formats for anomaly maps are supported:

* 16-bit grayscale PNG, pixel values divided by 65535 on load;
* a raw float raster: one ASCII header line ``F32 <width> <height>\\n``
  followed by width*height little-endian 32-bit floats, row-major.

Masks are 8-bit PNGs with values {0, 255}; images are 8-bit grayscale PNGs
(color inputs are reduced with the 0.299/0.587/0.114 luminance weights).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .validation import check_anomaly_map, check_binary_mask, check_gray_image

logger = logging.getLogger(__name__)

RAW_MAGIC = "F32"
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class MalformedHeaderError(ValueError):
    """Raised when a map file is neither a PNG nor a well-formed raw raster."""


class SizeMismatchError(ValueError):
    """Raised when a raw raster's declared dimensions disagree with its payload."""


@dataclass
class RegionSet:
    """Connected components of a binary mask.

    Component IDs are 1..count with no gaps, assigned in raster-scan
    first-occurrence order so labeling is deterministic across runs.
    ``boxes`` rows are (min_x, min_y, max_x, max_y), inclusive.
    """

    labels: np.ndarray
    count: int
    boxes: np.ndarray
    areas: np.ndarray


# ---------------------------------------------------------------------------
# anomaly map I/O


def load_anomaly_map(path, return_clamped: bool = False):
    """Load an anomaly map from PNG or raw-F32 file.

    Raw-format values outside [0, 1] (including non-finite ones) are clamped;
    the clamp count is logged and returned when ``return_clamped`` is set.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"anomaly map file not found: {path}")
    blob = path.read_bytes()
    if blob.startswith(_PNG_SIGNATURE):
        arr = cv2.imdecode(np.frombuffer(blob, np.uint8), cv2.IMREAD_UNCHANGED)
        if arr is None:
            raise MalformedHeaderError(f"not a decodable PNG: {path}")
        if arr.ndim == 3:
            arr = cv2.cvtColor(arr, cv2.COLOR_BGR2GRAY)
        if arr.dtype == np.uint16:
            out = arr.astype(np.float32) / 65535.0
        elif arr.dtype == np.uint8:
            out = arr.astype(np.float32) / 255.0
        else:
            raise MalformedHeaderError(f"unsupported PNG bit depth {arr.dtype}: {path}")
        clamped = 0
    else:
        out, clamped = _parse_raw_map(blob, path)
        if clamped:
            logger.warning("%d out-of-range values clamped to [0, 1] in %s", clamped, path)
    out = check_anomaly_map(out)
    if return_clamped:
        return out, clamped
    return out


def _parse_raw_map(blob: bytes, path: Path):
    newline = blob.find(b"\n")
    if newline < 0:
        raise MalformedHeaderError(f"missing header line in {path}")
    try:
        parts = blob[:newline].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError(f"non-ASCII header in {path}") from exc
    if len(parts) != 3 or parts[0] != RAW_MAGIC:
        raise MalformedHeaderError(f"expected 'F32 <width> <height>' header in {path}")
    try:
        width, height = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise MalformedHeaderError(f"non-integer dimensions in {path}") from exc
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"dimensions must be positive in {path}")
    payload = blob[newline + 1 :]
    if len(payload) != 4 * width * height:
        raise SizeMismatchError(
            f"{path}: header declares {width}x{height} "
            f"({4 * width * height} bytes) but payload has {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float32)
    nonfinite = ~np.isfinite(arr)
    arr[nonfinite] = 0.0
    clamped = int(nonfinite.sum() + (arr < 0.0).sum() + (arr > 1.0).sum())
    np.clip(arr, 0.0, 1.0, out=arr)
    return arr, clamped


def save_anomaly_map(anomaly_map, path) -> None:
    """Write an anomaly map as a 16-bit grayscale PNG (values scaled by 65535)."""
    arr = check_anomaly_map(anomaly_map)
    encoded = np.rint(arr.astype(np.float64) * 65535.0).astype(np.uint16)
    _imwrite(encoded, Path(path))


def save_anomaly_map_raw(anomaly_map, path) -> None:
    """Write an anomaly map in the raw F32 format (bit-exact round-trip)."""
    arr = check_anomaly_map(anomaly_map)
    height, width = arr.shape
    header = f"{RAW_MAGIC} {width} {height}\n".encode("ascii")
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# mask and image I/O


def save_mask(mask, path) -> None:
    """Write a binary mask as an 8-bit PNG with values {0, 255}."""
    arr = check_binary_mask(mask)
    _imwrite(arr * np.uint8(255), Path(path))


def load_mask(path) -> np.ndarray:
    """Load an 8-bit mask PNG; any nonzero pixel becomes 1."""
    arr = _imread(Path(path))
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2GRAY)
    return (arr > 0).astype(np.uint8)


def save_image(image, path) -> None:
    _imwrite(check_gray_image(image), Path(path))


def load_image(path) -> np.ndarray:
    """Load an image as 8-bit grayscale, reducing color via luminance weights."""
    arr = _imread(Path(path))
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2GRAY)
    if arr.dtype == np.uint16:
        arr = (arr // 257).astype(np.uint8)
    return check_gray_image(arr)


def _imread(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise IOError(f"failed to decode image: {path}")
    return arr


def _imwrite(arr: np.ndarray, path: Path) -> None:
    if not path.parent.is_dir():
        raise IOError(f"parent directory does not exist: {path.parent}")
    if not cv2.imwrite(str(path), arr):
        raise IOError(f"failed to write image: {path}")


# ---------------------------------------------------------------------------
# morphology

_STRUCTURE_8 = np.ones((3, 3), dtype=int)
_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def connected_components(mask, connectivity: int = 8) -> RegionSet:
    """Label connected components of a binary mask.

    Components are renumbered by the raster-scan position of their first
    pixel, independent of the labeling backend's internal order.
    """
    arr = check_binary_mask(mask)
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labels, count = ndimage.label(arr, structure=structure)
    labels = labels.astype(np.int32)
    if count == 0:
        return RegionSet(
            labels=labels,
            count=0,
            boxes=np.zeros((0, 4), dtype=np.int32),
            areas=np.zeros(0, dtype=np.int64),
        )
    flat = labels.ravel()
    nonzero = np.flatnonzero(flat)
    first_seen = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first_seen, flat[nonzero], nonzero)
    order = np.argsort(first_seen[1:], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    labels = remap[labels]

    areas = np.bincount(labels.ravel(), minlength=count + 1)[1:].astype(np.int64)
    boxes = np.zeros((count, 4), dtype=np.int32)
    for idx, slc in enumerate(ndimage.find_objects(labels, max_label=count)):
        boxes[idx] = (slc[1].start, slc[0].start, slc[1].stop - 1, slc[0].stop - 1)
    return RegionSet(labels=labels, count=count, boxes=boxes, areas=areas)


def erode(mask, radius: int) -> np.ndarray:
    """Erode with a square structuring element of side 2*radius+1.

    Pixels outside the image count as background, so regions touching the
    border shrink there too. Radius 0 is the identity.
    """
    arr = check_binary_mask(mask)
    if radius < 0:
        raise ValueError(f"erosion radius must be >= 0, got {radius}")
    if radius == 0:
        return arr.copy()
    side = 2 * radius + 1
    out = ndimage.binary_erosion(
        arr.astype(bool), structure=np.ones((side, side), dtype=bool), border_value=0
    )
    return out.astype(np.uint8)
