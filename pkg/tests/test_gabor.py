"""Gabor bank construction and the two convolution paths."""

import math
import time

import numpy as np
import pytest

from hmax import gabor


def naive_correlate(img, kernel):
    """Four-loop zero-padded correlation oracle, same-size output."""
    h, w = img.shape
    m = kernel.shape[0]
    half = (m - 1) // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    rr, cc = r + dy, c + dx
                    if 0 <= rr < h and 0 <= cc < w:
                        acc += img[rr, cc] * kernel[dy + half, dx + half]
            out[r, c] = acc
    return out


class TestFilterConstruction:
    def test_scale_one_parameters(self):
        assert gabor.aspect_ratio(7) == pytest.approx(2.8064, abs=1e-12)
        assert gabor.wavelength(7) == pytest.approx(3.508, abs=1e-12)

    def test_sizes_step_two(self):
        assert [gabor.filter_size(s) for s in (1, 2, 16)] == [7, 9, 37]

    def test_center_tap_before_normalization(self):
        raw = gabor.gabor_taps(9, math.pi / 4, gabor.aspect_ratio(9),
                               gabor.effective_width(9), gabor.wavelength(9))
        assert raw[4, 4] == pytest.approx(1.0, abs=1e-12)

    def test_horizontal_orientation_mirror_symmetric(self):
        f = gabor.make_filter(3, 0.0)
        np.testing.assert_allclose(f.taps, f.taps[::-1, :], atol=1e-12)

    def test_normalization_all_filters(self):
        bank = gabor.make_bank()
        for f in bank.filters:
            assert abs(f.taps.mean()) < 1e-9
            assert abs(np.linalg.norm(f.taps) - 1.0) < 1e-9

    def test_sigma_literal_mode_exists(self):
        f = gabor.make_filter(1, 0.0, sigma_mode="literal")
        assert f.size == 7
        with pytest.raises(ValueError):
            gabor.make_filter(1, 0.0, sigma_mode="nope")


class TestBank:
    def test_sixty_four_filters(self):
        bank = gabor.make_bank()
        assert len(bank) == 64

    def test_band_mapping(self):
        assert gabor.band_of_scale(1) == 1
        assert gabor.band_of_scale(3) == 2
        assert gabor.band_of_scale(16) == 8

    def test_largest_scale_is_37(self):
        bank = gabor.make_bank()
        assert bank.filter_at(16, 0).size == 37
        assert bank.max_size == 37

    def test_scale_major_ordering(self):
        bank = gabor.make_bank()
        for s in (1, 7, 16):
            for oi, theta in enumerate(gabor.ORIENTATIONS):
                f = bank.filter_at(s, oi)
                assert f.scale_index == s
                assert f.orientation == theta


class TestDenseConvolution:
    def test_zero_image(self):
        f = gabor.make_filter(1, 0.0)
        assert not gabor.convolve_dense(np.zeros((10, 10)), f).any()

    def test_impulse_recovers_taps(self):
        f = gabor.make_filter(2, math.pi / 2)
        img = np.zeros((25, 25))
        img[12, 12] = 1.0
        resp = gabor.convolve_dense(img, f)
        h = (f.size - 1) // 2
        block = resp[12 - h:12 + h + 1, 12 - h:12 + h + 1]
        np.testing.assert_allclose(block, np.abs(f.taps[::-1, ::-1]), atol=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        img = rng.random((20, 20))
        f = gabor.make_filter(1, math.pi / 4)
        expected = np.abs(naive_correlate(img, f.taps))
        np.testing.assert_allclose(gabor.convolve_dense(img, f), expected,
                                   atol=1e-6)

    def test_image_smaller_than_filter(self):
        f = gabor.make_filter(16, 0.0)
        with pytest.raises(ValueError):
            gabor.convolve_dense(np.ones((20, 20)), f)


class TestSeparable:
    def test_origin_product_is_one(self):
        sf = gabor.make_separable(4, math.pi / 4)
        h = (sf.size - 1) // 2
        assert np.real(sf.fx[h] * sf.gy[h]) == pytest.approx(1.0, abs=1e-12)

    def test_reconstructs_isotropic_dense_taps(self):
        for s in (1, 8, 16):
            for theta in gabor.ORIENTATIONS:
                sf = gabor.make_separable(s, theta)
                direct = gabor.gabor_taps(sf.size, theta, 1.0,
                                          gabor.effective_width(sf.size),
                                          gabor.wavelength(sf.size))
                np.testing.assert_allclose(sf.dense_taps(normalized=False),
                                           direct, atol=1e-9)

    def test_vertical_orientation_fx_pure_gaussian(self):
        sf = gabor.make_separable(5, math.pi / 2)
        assert np.abs(sf.fx.imag).max() < 1e-12

    def test_response_matches_dense_path(self):
        rng = np.random.default_rng(12)
        img = rng.random((40, 40))
        for s in (1, 6, 16):
            for theta in gabor.ORIENTATIONS:
                sf = gabor.make_separable(s, theta)
                dense = gabor.GaborFilter(s, theta, sf.dense_taps())
                a = gabor.convolve_dense(img, dense)
                b = gabor.convolve_separable(img, sf)
                assert np.abs(a - b).max() < 1e-5

    def test_zero_image(self):
        sf = gabor.make_separable(3, 0.0)
        assert not gabor.convolve_separable(np.zeros((13, 13)), sf).any()

    @pytest.mark.slow
    def test_faster_than_dense_at_largest_scale(self):
        rng = np.random.default_rng(13)
        img = rng.random((256, 256))
        sf = gabor.make_separable(16, math.pi / 4)
        dense = gabor.GaborFilter(16, math.pi / 4, sf.dense_taps())
        gabor.convolve_dense(img, dense)
        gabor.convolve_separable(img, sf)
        t_dense = t_sep = 0.0
        for _ in range(5):
            t0 = time.perf_counter()
            gabor.convolve_dense(img, dense)
            t_dense += time.perf_counter() - t0
            t0 = time.perf_counter()
            gabor.convolve_separable(img, sf)
            t_sep += time.perf_counter() - t0
        assert t_sep / 5 < t_dense / 5
