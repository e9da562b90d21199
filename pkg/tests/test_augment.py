import hashlib

import numpy as np
import pytest

from vectorwatch.augment import (AugmentKind, AugmentationSpec, BadFactor,
                                 MissingImage, augment_image, expand,
                                 factor_stream, gain, zoom)
from vectorwatch.imagecore import ImageTensor

from conftest import random_byte_image


class TestZoom:
    def test_identity_factor(self):
        rng = np.random.default_rng(0)
        img = random_byte_image(rng, 8, 8)
        assert zoom(img, 1.0) is img

    def test_constant_image_unchanged_by_zoom_in(self):
        img = ImageTensor(np.full((10, 10, 3), 99, np.float32))
        out = zoom(img, 1.5)
        assert np.array_equal(out.data, img.data)

    def test_center_pixel_spreads_to_central_block(self):
        # 10x10 black image, red pixel at (4,4). Zoom 2.0 crops rows/cols
        # 2..6 (5x5, red at the crop center) and resizes back. Half-pixel
        # bilinear puts output (4,4),(4,5),(5,4),(5,5) nearest the center:
        # weight 0.75*0.75 -> round(0.5625*255) = 143; next ring 0.1875 -> 48.
        data = np.zeros((10, 10, 3), np.float32)
        data[4, 4, 0] = 255
        out = zoom(ImageTensor(data), 2.0)
        red = out.data[:, :, 0]
        center = red[4:6, 4:6]
        assert np.array_equal(center, np.full((2, 2), 143, np.float32))
        assert red[3, 4] == 48 and red[4, 3] == 48 and red[6, 5] == 48
        assert red.max() == 143
        assert np.array_equal(out.data[:, :, 1], np.zeros((10, 10)))

    def test_zoom_out_pads_with_border_median(self):
        data = np.full((12, 12, 3), 200, np.float32)
        data[3:9, 3:9, :] = 20  # interior differs; border ring is all 200
        out = zoom(ImageTensor(data), 0.75)
        assert (out.height, out.width) == (12, 12)
        assert np.array_equal(out.data[0, 0], [200, 200, 200])
        assert np.array_equal(out.data[-1, -1], [200, 200, 200])

    @pytest.mark.parametrize("factor", [0.0, -1.0, 4.5])
    def test_bad_factor(self, factor):
        img = ImageTensor(np.zeros((4, 4, 3), np.float32))
        with pytest.raises(BadFactor):
            zoom(img, factor)


class TestGain:
    def test_arithmetic(self):
        img = ImageTensor(np.full((2, 2, 3), 100, np.float32))
        assert gain(img, 1.5).data[0, 0, 0] == 150

    def test_saturation(self):
        img = ImageTensor(np.full((2, 2, 3), 200, np.float32))
        assert gain(img, 1.5).data[0, 0, 0] == 255

    def test_identity(self):
        rng = np.random.default_rng(1)
        img = random_byte_image(rng, 5, 5)
        assert gain(img, 1.0) is img

    def test_bad_factor(self):
        img = ImageTensor(np.zeros((2, 2, 3), np.float32))
        with pytest.raises(BadFactor):
            gain(img, 0.0)


class TestSpec:
    def test_defaults_match_declared_ranges(self):
        spec = AugmentationSpec()
        assert spec.zoom_in == (1.05, 1.50)
        assert spec.zoom_out == (0.75, 0.90)
        assert spec.gain_up == (1.05, 1.50)
        assert spec.gain_down == (0.75, 0.95)

    @pytest.mark.parametrize("kwargs", [
        {"zoom_in": (1.5, 1.05)},
        {"zoom_in": (0.9, 1.5)},
        {"zoom_out": (0.75, 1.1)},
    ])
    def test_invalid_ranges(self, kwargs):
        with pytest.raises(ValueError):
            AugmentationSpec(**kwargs)


def _digest(sets):
    h = hashlib.sha256()
    for s in sets:
        for img in s.images():
            h.update(img.pixel_bytes())
    return h.hexdigest()


class TestExpand:
    def test_five_images_per_entry(self):
        rng = np.random.default_rng(2)
        store = {f"img-{i}": random_byte_image(rng, 12, 12) for i in range(3)}
        sets = expand(store, AugmentationSpec(seed=7), store.__getitem__)
        assert len(sets) == 3
        assert all(len(s.images()) == 5 for s in sets)

    def test_factors_within_ranges(self):
        rng = np.random.default_rng(3)
        store = {f"img-{i}": random_byte_image(rng, 8, 8) for i in range(20)}
        spec = AugmentationSpec(seed=11)
        for s in expand(store, spec, store.__getitem__):
            for v in s.variants:
                low, high = spec.range_for(v.kind)
                assert low <= v.factor <= high

    def test_seed_determinism(self):
        rng = np.random.default_rng(4)
        store = {f"img-{i}": random_byte_image(rng, 10, 10) for i in range(4)}
        spec = AugmentationSpec(seed=42)
        a = expand(store, spec, store.__getitem__)
        b = expand(store, spec, store.__getitem__)
        assert _digest(a) == _digest(b)
        c = expand(store, AugmentationSpec(seed=43), store.__getitem__)
        assert _digest(a) != _digest(c)

    def test_per_image_streams_independent_of_manifest(self):
        spec = AugmentationSpec(seed=5)
        assert factor_stream(spec, "imgA") == factor_stream(spec, "imgA")
        # dropping other images does not reshuffle imgA's factors
        rng = np.random.default_rng(5)
        store = {k: random_byte_image(rng, 8, 8) for k in ("imgA", "imgB")}
        full = expand(["imgA", "imgB"], spec, store.__getitem__)
        solo = expand(["imgA"], spec, store.__getitem__)
        assert [v.factor for v in full[0].variants] == \
               [v.factor for v in solo[0].variants]

    def test_missing_image(self):
        with pytest.raises(MissingImage):
            expand(["nope"], AugmentationSpec(), {}.__getitem__)

    def test_empty_manifest(self):
        with pytest.raises(ValueError):
            expand([], AugmentationSpec(), {}.__getitem__)

    def test_variant_order_and_dims(self):
        rng = np.random.default_rng(6)
        img = random_byte_image(rng, 9, 13)
        s = augment_image(img, "x", AugmentationSpec(seed=1))
        assert [v.kind for v in s.variants] == list(AugmentKind)
        for v in s.variants:
            assert (v.image.height, v.image.width) == (9, 13)
