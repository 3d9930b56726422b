"""Synthetic benchmark: textured products with shaped anomalies plus noisy
anomaly maps, so the whole pipeline can be verified without external data.

Shape classes are decidable from local geometry and intensity (a thin bright
scratch, a dark filled blob, a bright ring around a dark hole, a cluster of
bright speckles), and the "normal" class renders no anomaly at all; its maps
contain only false-positive blobs, which exercises the pseudo-label
correction path. All randomness derives from per-image seed sequences, so a
corpus is byte-reproducible from its seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .raster import connected_components, save_anomaly_map, save_image, save_mask

SHAPE_CLASSES = ("line-scratch", "blob", "ring-hole", "speckle-cluster", "normal")
NORMAL_CLASS = "normal"


@dataclass
class NoiseConfig:
    fp_blob_rate: float = 0.5
    miss_rate: float = 0.05
    blur_radius: int = 2
    score_jitter: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")
        if self.fp_blob_rate < 0 or self.blur_radius < 0 or self.score_jitter < 0:
            raise ValueError("noise parameters must be non-negative")

    @classmethod
    def none(cls) -> "NoiseConfig":
        return cls(fp_blob_rate=0.0, miss_rate=0.0, blur_radius=0, score_jitter=0.0)


@dataclass
class SynthConfig:
    num_unlabeled: int
    num_labeled: int = 0
    image_side: int = 64
    novel_classes: tuple = ("blob", "line-scratch", "normal")
    known_classes: tuple = ("ring-hole", "speckle-cluster")
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0

    def __post_init__(self):
        self.novel_classes = tuple(self.novel_classes)
        self.known_classes = tuple(self.known_classes)
        for name in self.novel_classes + self.known_classes:
            if name not in SHAPE_CLASSES:
                raise ValueError(f"unknown class {name!r}; choose from {SHAPE_CLASSES}")
        if set(self.novel_classes) & set(self.known_classes):
            raise ValueError("novel and known class sets must be disjoint")
        if not self.novel_classes or self.num_unlabeled < 1:
            raise ValueError("need novel classes and at least one unlabeled image")
        if self.num_labeled > 0 and not self.known_classes:
            raise ValueError("labeled images requested but no known classes given")
        if self.image_side < 32:
            raise ValueError(f"image_side must be >= 32, got {self.image_side}")
        if isinstance(self.noise, dict):
            self.noise = NoiseConfig(**self.noise)


@dataclass
class SynthImage:
    image_id: str
    class_name: str
    is_labeled: bool
    image: np.ndarray
    gt_mask: np.ndarray
    anomaly_map: np.ndarray
    regions: list


@dataclass
class SynthCorpus:
    images: list
    config: SynthConfig

    def manifest_rows(self) -> list[dict]:
        return [
            {
                "image_id": im.image_id,
                "class": im.class_name,
                "is_labeled": im.is_labeled,
                "regions": im.regions,
            }
            for im in self.images
        ]


def _blurred_layer(mask: np.ndarray, blur_radius: int, score: float) -> np.ndarray:
    """Blur a region mask and renormalize so its peak equals the region score.

    Keeps the map maximum over any region equal to that region's drawn score,
    even for regions thinner than the blur kernel.
    """
    layer = mask
    if blur_radius > 0:
        k = 2 * blur_radius + 1
        layer = cv2.blur(layer, (k, k))
    peak = layer.max()
    if peak > 0:
        layer = layer * (score / peak)
    return layer


def _fp_blob(rng: np.random.Generator, side: int, cx: int, cy: int, score: float,
             blur_radius: int) -> np.ndarray:
    """Over-detection: a small bump speckled by per-pixel noise.

    Unlike true regions, the response is ragged, so thresholding it yields
    flickering fragments rather than one stable component.
    """
    radius = int(rng.integers(2, 5))
    bump = _blurred_layer(_disk(side, cx, cy, radius).astype(np.float64), blur_radius, 1.0)
    speckle = rng.uniform(0.15, 1.0, size=bump.shape)
    layer = bump * speckle
    peak = layer.max()
    if peak > 0:
        layer = layer * (score / peak)
    return layer


def _background(rng: np.random.Generator, side: int) -> np.ndarray:
    base = 120.0 + rng.normal(0.0, 12.0, size=(side, side))
    base = cv2.blur(base, (3, 3))
    return np.clip(np.rint(base), 0, 255).astype(np.uint8)


def _disk(side: int, cx: int, cy: int, radius: int) -> np.ndarray:
    ys, xs = np.ogrid[:side, :side]
    return ((xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2).astype(np.uint8)


def _draw_shape(rng: np.random.Generator, class_name: str, side: int,
                cx: int, cy: int) -> tuple[np.ndarray, np.ndarray, dict]:
    """Render one anomaly at (cx, cy); returns (mask, intensity image, params)."""
    paint = np.zeros((side, side), dtype=np.float64)
    if class_name == "line-scratch":
        length = int(rng.integers(14, 22))
        angle = float(rng.uniform(0.0, np.pi))
        thickness = int(rng.integers(1, 3))
        dx, dy = np.cos(angle) * length / 2, np.sin(angle) * length / 2
        mask = np.zeros((side, side), dtype=np.uint8)
        cv2.line(mask, (int(cx - dx), int(cy - dy)), (int(cx + dx), int(cy + dy)), 1, thickness)
        paint[mask > 0] = 235.0
        params = {"length": length, "angle": round(angle, 4), "thickness": thickness}
    elif class_name == "blob":
        radius = int(rng.integers(4, 8))
        mask = _disk(side, cx, cy, radius)
        paint[mask > 0] = 30.0
        params = {"radius": radius}
    elif class_name == "ring-hole":
        outer = int(rng.integers(5, 9))
        inner = max(2, outer - int(rng.integers(2, 4)))
        mask = _disk(side, cx, cy, outer)
        ring = mask.astype(bool) & ~_disk(side, cx, cy, inner).astype(bool)
        paint[ring] = 215.0
        paint[_disk(side, cx, cy, inner) > 0] = 45.0
        params = {"outer_radius": outer, "inner_radius": inner}
    elif class_name == "speckle-cluster":
        cluster_radius = int(rng.integers(5, 8))
        mask = _disk(side, cx, cy, cluster_radius)
        count = int(rng.integers(6, 11))
        for _ in range(count):
            angle = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(0, cluster_radius - 1)
            px = int(cx + np.cos(angle) * dist)
            py = int(cy + np.sin(angle) * dist)
            dot = _disk(side, px, py, 1).astype(bool)
            paint[dot] = 225.0
        params = {"cluster_radius": cluster_radius, "speckles": count}
    else:
        raise ValueError(f"cannot draw class {class_name!r}")
    return mask, paint, params


def _render_image(rng: np.random.Generator, class_name: str, side: int, noise: NoiseConfig):
    image = _background(rng, side).astype(np.float64)
    gt_mask = np.zeros((side, side), dtype=np.uint8)
    regions = []
    if class_name != NORMAL_CLASS:
        count = int(rng.integers(1, 3))
        margin = 12
        centers = []
        for _ in range(count):
            for _attempt in range(50):
                cx = int(rng.integers(margin, side - margin))
                cy = int(rng.integers(margin, side - margin))
                if all((cx - ox) ** 2 + (cy - oy) ** 2 >= 26**2 for ox, oy in centers):
                    break
            else:
                continue
            centers.append((cx, cy))
            mask, paint, params = _draw_shape(rng, class_name, side, cx, cy)
            if mask.sum() == 0:
                continue
            image[paint > 0] = paint[paint > 0]
            gt_mask |= mask
            ys, xs = np.nonzero(mask)
            regions.append({
                "shape": class_name,
                "box": [int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())],
                "params": params,
            })
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    # anomaly map: blurred per-region mask scaled by its score, max-composited
    anomaly_map = np.zeros((side, side), dtype=np.float64)
    comps = connected_components(gt_mask, connectivity=8)
    for idx in range(comps.count):
        if rng.random() < noise.miss_rate:
            continue
        score = float(np.clip(rng.uniform(0.6, 1.0) + rng.normal(0.0, noise.score_jitter), 0.0, 1.0))
        layer = _blurred_layer((comps.labels == idx + 1).astype(np.float64), noise.blur_radius, score)
        anomaly_map = np.maximum(anomaly_map, layer)
    fp_count = int(rng.poisson(noise.fp_blob_rate))
    for _ in range(fp_count):
        cx = int(rng.integers(4, side - 4))
        cy = int(rng.integers(4, side - 4))
        score = float(rng.uniform(0.2, 0.5))
        anomaly_map = np.maximum(anomaly_map, _fp_blob(rng, side, cx, cy, score, noise.blur_radius))
    anomaly_map = np.clip(anomaly_map, 0.0, 1.0).astype(np.float32)
    return image, gt_mask, anomaly_map, regions


def _assign_classes(count: int, classes: tuple) -> list[str]:
    # round-robin keeps requested class counts exactly balanced
    return [classes[i % len(classes)] for i in range(count)]


def generate(cfg: SynthConfig) -> SynthCorpus:
    """Generate the full corpus in memory, deterministically from cfg.seed."""
    images = []
    unlabeled_classes = _assign_classes(cfg.num_unlabeled, cfg.novel_classes)
    labeled_classes = _assign_classes(cfg.num_labeled, cfg.known_classes) if cfg.num_labeled else []
    specs = [("u", i, name, False) for i, name in enumerate(unlabeled_classes)]
    specs += [("l", i, name, True) for i, name in enumerate(labeled_classes)]
    for prefix, idx, class_name, is_labeled in specs:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0 if prefix == "u" else 1, idx]))
        image, gt_mask, anomaly_map, regions = _render_image(rng, class_name, cfg.image_side, cfg.noise)
        images.append(SynthImage(
            image_id=f"{prefix}{idx:04d}",
            class_name=class_name,
            is_labeled=is_labeled,
            image=image,
            gt_mask=gt_mask,
            anomaly_map=anomaly_map,
            regions=regions,
        ))
    return SynthCorpus(images=images, config=cfg)


def write_corpus(corpus: SynthCorpus, out_dir) -> None:
    """Write images/, masks/, maps/ and manifest.jsonl under out_dir."""
    out = Path(out_dir)
    for sub in ("images", "masks", "maps"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for im in corpus.images:
        save_image(im.image, out / "images" / f"{im.image_id}.png")
        save_mask(im.gt_mask, out / "masks" / f"{im.image_id}.png")
        save_anomaly_map(im.anomaly_map, out / "maps" / f"{im.image_id}.png")
    with open(out / "manifest.jsonl", "w") as fh:
        for row in corpus.manifest_rows():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(out / "synth_config.json", "w") as fh:
        json.dump(asdict(corpus.config), fh, sort_keys=True, indent=2)
        fh.write("\n")
