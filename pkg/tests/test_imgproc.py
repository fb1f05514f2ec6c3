import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dataeff import (Blur, Brightness, ColorJitter, Filter, Hue, Noise, Pixelization,
                     Saturation, Sharpen, ShufflePixels, ValidationError, apply_filter,
                     apply_hue, apply_noise, apply_pixel_transform, apply_pixelization,
                     apply_shuffle_pixels, load_image, save_png, transform_from_json,
                     transform_to_json)
from conftest import random_image
from oracles import block_means, conv3x3, hue_rotate, median3x3

small_images = hnp.arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12),
                                              st.just(3)))

IDENTITY_SPECS = [
    Brightness(1.0),
    ColorJitter((1.0, 1.0, 1.0)),
    Saturation(1.0),
    Sharpen(0.0),
    Blur(0.0),
    Noise(0.0, seed=7),
    Pixelization(1),
    Hue(0.0),
]


class TestIdentities:
    @pytest.mark.parametrize("spec", IDENTITY_SPECS, ids=lambda s: type(s).__name__)
    def test_identity_parameters_are_noops(self, rng, spec):
        img = random_image(rng, 17, 13)
        assert np.array_equal(apply_pixel_transform(img, spec), img)

    def test_full_hue_rotation_is_identity(self, rng):
        img = random_image(rng, 9, 7)
        assert np.array_equal(apply_hue(img, 360.0), img)


class TestContracts:
    @pytest.mark.parametrize("spec", [
        Brightness(1.3), ColorJitter((0.9, 1.1, 1.0)), Saturation(0.4), Sharpen(1.5),
        Blur(0.8), Noise(6.0, seed=3), ShufflePixels(4, seed=5), Pixelization(3),
        Filter("smooth"), Filter("median"), Filter("mode"), Hue(42.0),
    ], ids=str)
    def test_shape_preserved_and_deterministic(self, rng, spec):
        img = random_image(rng, 15, 11)
        out = apply_pixel_transform(img, spec)
        assert out.shape == img.shape and out.dtype == np.uint8
        assert np.array_equal(out, apply_pixel_transform(img, spec))

    def test_extreme_inputs_stay_in_range(self):
        img = np.zeros((6, 6, 3), np.uint8)
        img[:3] = 255
        for spec in (Brightness(3.0), Sharpen(2.0), Noise(50.0, seed=1), Hue(180.0)):
            out = apply_pixel_transform(img, spec)
            assert out.min() >= 0 and out.max() <= 255

    @pytest.mark.parametrize("spec", [
        Brightness(0.0), Brightness(-1.0), Saturation(-0.1), Sharpen(-1.0), Blur(-0.5),
        Noise(-2.0, seed=0), ShufflePixels(1, seed=0), Pixelization(0),
        Filter("sobel"),
    ], ids=str)
    def test_out_of_bounds_parameters_rejected(self, rng, spec):
        with pytest.raises(ValidationError):
            apply_pixel_transform(random_image(rng, 4, 4), spec)


class TestBrightness:
    def test_uniform_gray_scales(self):
        img = np.full((5, 5, 3), 100, np.uint8)
        assert (apply_pixel_transform(img, Brightness(1.5)) == 150).all()

    @given(small_images, st.floats(0.1, 3.0))
    def test_per_pixel_formula(self, img, factor):
        out = apply_pixel_transform(img, Brightness(factor))
        expect = np.clip(np.floor(img.astype(np.float64) * factor + 0.5), 0, 255)
        assert np.array_equal(out, expect.astype(np.uint8))


class TestSaturation:
    def test_zero_is_grayscale(self, rng):
        out = apply_pixel_transform(random_image(rng, 8, 8), Saturation(0.0))
        assert (out[..., 0] == out[..., 1]).all() and (out[..., 1] == out[..., 2]).all()


class TestHue:
    def test_red_to_green(self):
        red = np.zeros((1, 1, 3), np.uint8)
        red[0, 0] = (255, 0, 0)
        assert tuple(apply_hue(red, 120.0)[0, 0]) == (0, 255, 0)

    def test_gray_pixels_unchanged(self):
        gray = np.full((4, 4, 3), 77, np.uint8)
        for delta in (13.0, 120.0, 275.5):
            assert np.array_equal(apply_hue(gray, delta), gray)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 360.0))
    def test_matches_colorsys_within_quantization(self, seed, delta):
        img = random_image(np.random.default_rng(seed), 5, 4)
        got = apply_hue(img, delta).astype(np.int64)
        ref = hue_rotate(img, delta).astype(np.int64)
        assert np.abs(got - ref).max() <= 1


class TestNoise:
    def test_determinism(self, rng):
        img = random_image(rng, 10, 10)
        a = apply_noise(img, 8.0, seed=99)
        b = apply_noise(img, 8.0, seed=99)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, apply_noise(img, 8.0, seed=100))

    def test_statistics(self):
        img = np.full((1000, 400, 3), 128, np.uint8)
        out = apply_noise(img, 10.0, seed=42).astype(np.float64)
        for ch in range(3):
            assert abs(out[..., ch].std() - 10.0) < 0.5


class TestPixelization:
    def test_blocks_constant_and_mean(self, rng):
        img = random_image(rng, 4, 4)
        out = apply_pixelization(img, 2)
        assert np.array_equal(out, block_means(img, 2))
        for by in range(0, 4, 2):
            for bx in range(0, 4, 2):
                block = out[by:by + 2, bx:bx + 2]
                assert (block == block[0, 0]).all()

    def test_factor_covering_image_gives_constant(self, rng):
        img = random_image(rng, 6, 5)
        out = apply_pixelization(img, 8)
        assert (out == out[0, 0]).all()
        mean = img.reshape(-1, 3).astype(np.float64).mean(axis=0)
        assert np.array_equal(out[0, 0], np.floor(mean + 0.5).astype(np.uint8))

    @given(small_images, st.integers(1, 6))
    def test_matches_block_oracle(self, img, factor):
        assert np.array_equal(apply_pixelization(img, factor), block_means(img, factor))


class TestShufflePixels:
    def test_multiset_preserved_per_tile(self, rng):
        img = random_image(rng, 9, 7)
        out = apply_shuffle_pixels(img, 4, seed=11)
        for by in range(0, 7, 4):
            for bx in range(0, 9, 4):
                a = img[by:by + 4, bx:bx + 4].reshape(-1, 3)
                b = out[by:by + 4, bx:bx + 4].reshape(-1, 3)
                assert sorted(map(tuple, a)) == sorted(map(tuple, b))

    def test_deterministic(self, rng):
        img = random_image(rng, 8, 8)
        assert np.array_equal(apply_shuffle_pixels(img, 4, seed=5),
                              apply_shuffle_pixels(img, 4, seed=5))


class TestFilters:
    def test_smooth_fixes_uniform(self):
        img = np.full((6, 6, 3), 90, np.uint8)
        assert np.array_equal(apply_filter(img, "smooth"), img)

    def test_median_removes_salt(self):
        img = np.full((7, 7, 3), 50, np.uint8)
        img[3, 3] = 255
        assert (apply_filter(img, "median") == 50).all()

    @pytest.mark.parametrize("kind", ["smooth", "detail", "edge_enhance"])
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_convolutions_match_naive_oracle(self, kind, seed):
        from dataeff.imgproc import _KERNELS

        img = random_image(np.random.default_rng(seed), 8, 8)
        assert np.array_equal(apply_filter(img, kind), conv3x3(img, _KERNELS[kind]))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_median_matches_naive_oracle(self, seed):
        img = random_image(np.random.default_rng(seed), 8, 8)
        assert np.array_equal(apply_filter(img, "median"), median3x3(img))

    def test_mode_tie_breaks_to_smallest(self):
        # corner neighborhood of a 2x2 image holds values {10 x4, 20 x4, 30 x1}
        img = np.array([[[10, 10, 10], [20, 20, 20]],
                        [[20, 20, 20], [30, 30, 30]]], dtype=np.uint8)
        out = apply_filter(img, "mode")
        assert tuple(out[0, 0]) == (10, 10, 10)


class TestSpecJson:
    @pytest.mark.parametrize("spec", [
        Brightness(1.2), ColorJitter((0.9, 1.0, 1.1)), Saturation(0.7), Sharpen(1.0),
        Blur(0.6), Noise(9.0, seed=123), ShufflePixels(4, seed=9), Pixelization(2),
        Filter("edge_enhance"), Hue(-12.5),
    ], ids=str)
    def test_roundtrip(self, spec):
        assert transform_from_json(transform_to_json(spec)) == spec

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            transform_from_json({"kind": "solarize"})


class TestImageIO:
    def test_png_roundtrip(self, tmp_path, rng):
        img = random_image(rng, 20, 14)
        save_png(img, tmp_path / "a.png")
        assert np.array_equal(load_image(tmp_path / "a.png"), img)

    def test_jpeg_read(self, tmp_path, rng):
        from PIL import Image

        img = random_image(rng, 16, 16)
        Image.fromarray(img, "RGB").save(tmp_path / "a.jpg", format="JPEG")
        loaded = load_image(tmp_path / "a.jpg")
        assert loaded.shape == img.shape and loaded.dtype == np.uint8

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "nope.png")
