# -*- coding: UTF-8 -*-
import os
import tempfile
import unittest
from collections import Counter
from unittest.mock import patch, MagicMock

import numpy as np

# Mock logger before importing the service
mock_synthetic_logger = MagicMock()
patch_synthetic_logger = patch('utils.logger.logger', mock_synthetic_logger)
patch_synthetic_logger.start()

from config import SyntheticSpec
from services.feature_io import DatasetStore
from services.synthetic import SyntheticGenerator, majority, window_differs
from utils.errors import ConfigError, SpecError


class TestMajorityHelpers(unittest.TestCase):

    def test_majority(self):
        self.assertEqual(majority([1, 1, 0], 3), 1)
        self.assertIsNone(majority([0, 1], 2))
        self.assertIsNone(majority([2, 2, 0, 0, 1], 3))
        self.assertEqual(majority([2], 3), 2)

    def test_window_differs(self):
        self.assertFalse(window_differs([0, 0, 0, 0], 0, 2, 2))
        # [0, 1] 窗口并列，视为不同
        self.assertTrue(window_differs([0, 0, 0, 1], 0, 2, 2))
        self.assertTrue(window_differs([1, 1, 0, 0, 0], 0, 2, 2))


class TestGlobalMajority(unittest.TestCase):

    def test_labels_match_recount(self):
        spec = SyntheticSpec(T=4, N=2, I=2, vocab=2, noise_sigma=0.0, samples=30, seed=3, d=6,
                             window_segments=1)
        generator = SyntheticGenerator(spec)
        dataset = generator.generate()
        self.assertEqual(len(dataset.samples), 30)
        for sample, latent in zip(dataset.samples, dataset.latents):
            frames = sample.features.reshape(4, 2, 6)
            colors = []
            for frame in frames:
                np.testing.assert_array_equal(frame[0], frame[1])
                matches = [c for c in range(2) if np.array_equal(frame[0], generator.palette[c])]
                self.assertEqual(len(matches), 1)
                colors.append(matches[0])
            counts = Counter(colors).most_common()
            self.assertGreater(counts[0][1], counts[1][1] if len(counts) > 1 else -1)
            self.assertEqual(sample.label, counts[0][0])
            self.assertEqual(latent["colors"], colors)
            np.testing.assert_array_equal(sample.answers.candidates, generator.palette)

    def test_window_property_fraction(self):
        spec = SyntheticSpec(T=16, N=2, I=8, vocab=5, samples=60, seed=11, d=4, window_segments=4)
        dataset = SyntheticGenerator(spec).generate()
        self.assertGreaterEqual(dataset.window_fraction, 0.5)
        flagged = 0
        for latent in dataset.latents:
            colors = latent["colors"]
            differs = False
            for start in range(16 - 8 + 1):
                counts = Counter(colors[start:start + 8]).most_common()
                tied = len(counts) > 1 and counts[0][1] == counts[1][1]
                if tied or counts[0][0] != latent["label"]:
                    differs = True
            self.assertEqual(differs, latent["window_differs"])
            flagged += int(differs)
        self.assertGreaterEqual(flagged / 60, 0.5)

    def test_unsatisfiable_constraints(self):
        spec = SyntheticSpec(T=2, N=1, I=1, vocab=2, samples=3, d=2, window_segments=1)
        with self.assertRaises(SpecError):
            SyntheticGenerator(spec, max_draws=200).generate()

    def test_invalid_settings(self):
        with self.assertRaises(ConfigError):
            SyntheticSpec(task="counting")
        with self.assertRaises(ConfigError):
            SyntheticSpec(vocab=1)
        with self.assertRaises(ConfigError):
            SyntheticSpec(window_segments=9)


class TestTemporalOrder(unittest.TestCase):

    def test_events_in_different_segments(self):
        spec = SyntheticSpec(task="temporal-order", T=8, N=2, I=4, noise_sigma=0.0, samples=40, seed=5, d=3,
                             window_segments=1)
        generator = SyntheticGenerator(spec)
        dataset = generator.generate()
        for sample, latent in zip(dataset.samples, dataset.latents):
            a, b = latent["a_frame"], latent["b_frame"]
            self.assertNotEqual(a // 2, b // 2)
            self.assertEqual(sample.label, 0 if a < b else 1)
            frames = sample.features.reshape(8, 2, 3)
            np.testing.assert_array_equal(frames[a, 0], generator.events[0])
            np.testing.assert_array_equal(frames[b, 1], generator.events[1])
        self.assertEqual(set(s.label for s in dataset.samples), {0, 1})


class TestWrite(unittest.TestCase):

    def test_write_is_deterministic(self):
        spec = SyntheticSpec(T=4, N=2, I=2, vocab=3, samples=5, seed=9, d=4, window_segments=1)
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            self.assertEqual(SyntheticGenerator(spec).write(first), 3 * 5 + 2)
            SyntheticGenerator(spec).write(second)
            names = sorted(os.listdir(first))
            self.assertEqual(names, sorted(os.listdir(second)))
            for name in names:
                with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
                    self.assertEqual(a.read(), b.read(), name)
            loaded = DatasetStore().load(first)
            self.assertEqual(len(loaded), 5)
            manifest = DatasetStore.read_manifest(first)
            self.assertEqual(manifest["task"], "global-majority")
            self.assertEqual(len(manifest["latents"]), 5)


if __name__ == '__main__':
    unittest.main()
