import math

import numpy as np
import pytest

from mebinncd.crop import RegionCropper, crop_regions, resize_to_model
from mebinncd.raster import connected_components


def square_box_oracle(min_x, min_y, max_x, max_y, pad, min_frac, width, height):
    """Independent geometry script: recompute the crop square step by step."""
    w = max_x - min_x + 1
    h = max_y - min_y + 1
    side = max(w, h)
    side = math.ceil(side + 2 * pad * side)  # pad added per side
    side = max(side, max(1, math.ceil(min_frac * min(width, height))))
    side = min(side, width, height)
    cx2 = min_x + max_x + 1  # twice the box center
    x0 = (cx2 - side) // 2
    y0 = (min_y + max_y + 1 - side) // 2
    x0 = min(max(x0, 0), width - side)
    y0 = min(max(y0, 0), height - side)
    return x0, y0, x0 + side - 1, y0 + side - 1


def make_scene(width, height, block):
    image = np.full((height, width), 100, dtype=np.uint8)
    mask = np.zeros((height, width), dtype=np.uint8)
    amap = np.zeros((height, width), dtype=np.float32)
    x0, y0, x1, y1 = block
    mask[y0 : y1 + 1, x0 : x1 + 1] = 1
    amap[y0 : y1 + 1, x0 : x1 + 1] = 0.8
    return image, mask, amap


class TestCropRegions:
    def test_centered_component_box_arithmetic(self):
        image, mask, amap = make_scene(100, 100, (45, 45, 54, 54))
        records = crop_regions(image, mask, amap, padding_frac=0.1, min_size_frac=0.01)
        assert len(records) == 1
        rec = records[0]
        side = rec.crop_box[2] - rec.crop_box[0] + 1
        assert side == 12  # ceil(10 * 1.2)
        assert rec.crop_box == square_box_oracle(45, 45, 54, 54, 0.1, 0.01, 100, 100)
        assert rec.sub_image.shape == (12, 12)
        assert rec.area == 100
        assert rec.anomaly_score == pytest.approx(0.8)

    def test_min_size_floor(self):
        image, mask, amap = make_scene(200, 200, (60, 60, 60, 60))
        records = crop_regions(image, mask, amap, padding_frac=0.1, min_size_frac=0.01)
        side = records[0].crop_box[2] - records[0].crop_box[0] + 1
        assert side == 2  # max(ceil(1.2), ceil(0.01 * 200)) = 2

    def test_random_boxes_match_geometry_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            width, height = int(rng.integers(40, 120)), int(rng.integers(40, 120))
            x0 = int(rng.integers(0, width - 8))
            y0 = int(rng.integers(0, height - 8))
            x1 = x0 + int(rng.integers(0, min(18, width - x0 - 1)))
            y1 = y0 + int(rng.integers(0, min(18, height - y0 - 1)))
            image, mask, amap = make_scene(width, height, (x0, y0, x1, y1))
            pad = float(rng.choice([0.0, 0.1, 0.25]))
            rec = crop_regions(image, mask, amap, padding_frac=pad, min_size_frac=0.01)[0]
            assert rec.crop_box == square_box_oracle(x0, y0, x1, y1, pad, 0.01, width, height)

    def test_one_record_per_component_ordered(self):
        image = np.full((40, 40), 50, dtype=np.uint8)
        mask = np.zeros((40, 40), dtype=np.uint8)
        mask[2:6, 2:6] = 1
        mask[20:30, 20:30] = 1
        amap = mask.astype(np.float32) * 0.9
        records = crop_regions(image, mask, amap)
        assert [r.region_index for r in records] == [0, 1]
        assert [r.area for r in records] == [16, 100]
        assert connected_components(mask).count == len(records)

    def test_component_pixels_inside_crop_box(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            mask = np.zeros((64, 64), dtype=np.uint8)
            x, y = rng.integers(0, 56, 2)
            mask[y : y + 8, x : x + 8] = 1
            image = np.zeros((64, 64), dtype=np.uint8)
            rec = crop_regions(image, mask, None)[0]
            ys, xs = np.nonzero(mask)
            bx0, by0, bx1, by1 = rec.crop_box
            assert xs.min() >= bx0 and xs.max() <= bx1
            assert ys.min() >= by0 and ys.max() <= by1
            # square and inside image
            assert bx1 - bx0 == by1 - by0
            assert 0 <= bx0 and bx1 < 64 and 0 <= by0 and by1 < 64

    def test_border_component_shifted_inward(self):
        image, mask, amap = make_scene(50, 50, (0, 0, 9, 9))
        rec = crop_regions(image, mask, amap, padding_frac=0.1)[0]
        assert rec.crop_box[0] == 0 and rec.crop_box[1] == 0
        assert rec.crop_box[2] - rec.crop_box[0] + 1 == 12

    def test_empty_mask_returns_empty(self):
        image = np.zeros((10, 10), dtype=np.uint8)
        mask = np.zeros((10, 10), dtype=np.uint8)
        assert crop_regions(image, mask, None) == []

    def test_score_ignores_padding_background(self):
        image, mask, amap = make_scene(60, 60, (20, 20, 29, 29))
        amap[0, 0] = 1.0  # hot pixel outside the component
        rec = crop_regions(image, mask, amap)[0]
        assert rec.anomaly_score == pytest.approx(0.8)

    def test_score_defaults_to_one_without_map(self):
        image, mask, _ = make_scene(60, 60, (20, 20, 29, 29))
        assert crop_regions(image, mask, None)[0].anomaly_score == 1.0


class TestResizeToModel:
    def test_identity_when_same_side(self):
        image, mask, amap = make_scene(60, 60, (20, 20, 29, 29))
        rec = crop_regions(image, mask, amap)[0]
        out = resize_to_model(rec, rec.sub_image.shape[0])
        assert np.array_equal(out.sub_image, rec.sub_image)
        assert np.array_equal(out.sub_mask, rec.sub_mask)

    def test_nearest_neighbor_block_upsample(self):
        rec = crop_regions(
            np.zeros((2, 2), dtype=np.uint8),
            np.array([[1, 0], [0, 0]], dtype=np.uint8),
            None,
            min_size_frac=1.0,
        )[0]
        out = resize_to_model(rec, 4)
        assert out.sub_mask.sum() == 4
        assert out.sub_mask[:2, :2].all()

    def test_bilinear_constant_stays_constant(self):
        image = np.full((16, 16), 77, dtype=np.uint8)
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[4:12, 4:12] = 1
        rec = crop_regions(image, mask, None)[0]
        out = resize_to_model(rec, 32)
        assert (out.sub_image == 77).all()

    def test_mask_stays_binary_and_metadata_invariant(self):
        image, mask, amap = make_scene(60, 60, (10, 10, 25, 25))
        rec = crop_regions(image, mask, amap)[0]
        out = resize_to_model(rec, 32)
        assert set(np.unique(out.sub_mask)) <= {0, 1}
        assert out.area == rec.area
        assert out.anomaly_score == rec.anomaly_score
        assert out.crop_box == rec.crop_box


class TestRegionCropper:
    def test_transform_batches(self):
        scenes = []
        for i in range(3):
            image, mask, amap = make_scene(40, 40, (5 + i, 5, 14 + i, 14))
            scenes.append((image, mask, amap, f"img{i}"))
        records = RegionCropper(resize_side=32).fit(scenes).transform(scenes)
        assert len(records) == 3
        assert {r.image_id for r in records} == {"img0", "img1", "img2"}
        assert all(r.sub_image.shape == (32, 32) for r in records)

    def test_get_params(self):
        params = RegionCropper(padding_frac=0.2).get_params()
        assert params["padding_frac"] == 0.2
