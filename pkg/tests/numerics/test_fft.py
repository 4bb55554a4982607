# -*- coding: UTF-8 -*-
import unittest

import numpy as np

from numerics.alloc import AllocationTracker
from numerics.fft import (ComplexBuffer, direct_convolve_causal, fft, fft_convolve_causal, ifft,
                          is_power_of_two, next_power_of_two)
from utils.errors import DimensionError


class TestFft(unittest.TestCase):

    def test_power_of_two_helpers(self):
        self.assertTrue(is_power_of_two(1))
        self.assertTrue(is_power_of_two(4096))
        self.assertFalse(is_power_of_two(0))
        self.assertFalse(is_power_of_two(12))
        self.assertEqual(next_power_of_two(1), 1)
        self.assertEqual(next_power_of_two(5), 8)
        self.assertEqual(next_power_of_two(8), 8)

    def test_matches_numpy_transform(self):
        rng = np.random.default_rng(0)
        re, im = rng.normal(size=(3, 32)), rng.normal(size=(3, 32))
        out = fft(ComplexBuffer(re, im))
        expected = np.fft.fft(re + 1j * im, axis=-1)
        np.testing.assert_allclose(out.re, expected.real, atol=1e-10)
        np.testing.assert_allclose(out.im, expected.imag, atol=1e-10)

    def test_inverse_round_trip(self):
        x = np.random.default_rng(1).normal(size=64)
        back = ifft(fft(ComplexBuffer.from_real(x)))
        np.testing.assert_allclose(back.re, x, atol=1e-12)
        np.testing.assert_allclose(back.im, 0.0, atol=1e-12)

    def test_rejects_non_power_of_two(self):
        with self.assertRaises(DimensionError):
            fft(ComplexBuffer.from_real(np.ones(12)))

    def test_plane_shapes_must_match(self):
        with self.assertRaises(DimensionError):
            ComplexBuffer(np.ones(4), np.ones(8))


class TestCausalConvolution(unittest.TestCase):

    def test_fft_path_matches_direct(self):
        rng = np.random.default_rng(2)
        for length in (1, 3, 17, 256):
            signal = rng.normal(size=(4, length))
            kernel = rng.normal(size=(4, length))
            fast = fft_convolve_causal(signal, kernel)
            slow = direct_convolve_causal(signal, kernel)
            err = np.max(np.abs(fast - slow)) / max(np.max(np.abs(slow)), 1e-300)
            self.assertLessEqual(err, 1e-10, f"L={length}")

    def test_impulse_returns_kernel(self):
        kernel = np.array([1.0, 0.5, 0.25, 0.125])
        out = fft_convolve_causal(np.array([1.0, 0.0, 0.0, 0.0]), kernel)
        np.testing.assert_allclose(out, kernel, atol=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            fft_convolve_causal(np.ones(4), np.ones(5))
        with self.assertRaises(DimensionError):
            direct_convolve_causal(np.ones(4), np.ones(5))

    def test_tracker_releases_every_buffer(self):
        tracker = AllocationTracker()
        fft_convolve_causal(np.ones(8), np.ones(8), tracker)
        self.assertEqual(tracker.live, 0)
        # padded length 16: two padded inputs plus four spectrum planes
        self.assertEqual(tracker.peak, 6 * 16)
        self.assertGreater(tracker.allocs, 0)


if __name__ == '__main__':
    unittest.main()
