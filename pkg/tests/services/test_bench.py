# -*- coding: UTF-8 -*-
import os
import tempfile
import unittest
from unittest.mock import patch, MagicMock

# Mock logger before importing the service
mock_bench_logger = MagicMock()
patch_bench_logger = patch('utils.logger.logger', mock_bench_logger)
patch_bench_logger.start()

from services.bench import Benchmark, BenchReport, BenchRow
from utils.errors import ConfigError


class TestBenchmark(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.report = Benchmark(["self-attention", "gated-ssl", "conv1d"], [256, 512], runs=5).run()

    def test_rows(self):
        self.assertEqual(len(self.report.rows), 6)
        self.assertEqual([r.L for r in self.report.rows], [256, 256, 256, 512, 512, 512])
        for row in self.report.rows:
            self.assertGreater(row.peak_elems, 0)
            self.assertGreater(row.allocs, 0)
            self.assertGreaterEqual(row.wall_ns, 0)

    def test_attention_peak_grows_quadratically(self):
        (ratio,) = self.report.peak_ratios("self-attention")
        self.assertGreaterEqual(ratio, 3.6)
        self.assertLessEqual(ratio, 4.4)

    def test_linear_mechanisms_grow_linearly(self):
        for mechanism in ("gated-ssl", "conv1d"):
            (ratio,) = self.report.peak_ratios(mechanism)
            self.assertGreaterEqual(ratio, 1.8, mechanism)
            self.assertLessEqual(ratio, 2.2, mechanism)

    def test_csv(self):
        lines = self.report.to_csv().splitlines()
        self.assertEqual(lines[0], "mechanism,L,peak_elems,allocs,wall_ns")
        self.assertEqual(len(lines), 7)
        self.assertTrue(lines[1].startswith("self-attention,256,"))

    def test_write(self):
        report = BenchReport([BenchRow("gated-ssl", 256, 10, 3, 100)])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out", "bench.csv")
            text = Benchmark.write(report, path)
            with open(path, "r", encoding="utf-8") as f:
                self.assertEqual(f.read(), text)
        self.assertEqual(text, "mechanism,L,peak_elems,allocs,wall_ns\ngated-ssl,256,10,3,100\n")

    def test_invalid_arguments(self):
        with self.assertRaises(ConfigError):
            Benchmark(["lstm"], [256])
        with self.assertRaises(ConfigError):
            Benchmark(["conv1d"], [300])
        with self.assertRaises(ConfigError):
            Benchmark(["conv1d"], [256], runs=2)


@unittest.skipUnless(os.environ.get("GSMT_SLOW_TESTS"), "set GSMT_SLOW_TESTS=1 to run the full sweep")
class TestFullSweep(unittest.TestCase):

    def test_default_lengths(self):
        report = Benchmark().run()
        for ratio in report.peak_ratios("self-attention"):
            self.assertGreaterEqual(ratio, 3.6)
            self.assertLessEqual(ratio, 4.4)
        for ratio in report.peak_ratios("gated-ssl"):
            self.assertLessEqual(ratio, 2.3)
        for ratio in report.peak_ratios("conv1d"):
            self.assertLessEqual(ratio, 2.2)


if __name__ == '__main__':
    unittest.main()
