# -*- coding: UTF-8 -*-
import os
import tempfile
import unittest
from unittest.mock import patch, MagicMock

# Mock logger before importing the service
mock_ablation_logger = MagicMock()
patch_ablation_logger = patch('utils.logger.logger', mock_ablation_logger)
patch_ablation_logger.start()

from app_config import AppConfig
from config import RunConfig
from services.ablation import DEFAULT_SWEEPS, AblationRow, AblationRunner, arm_overrides
from utils.errors import ConfigError

TINY_RUN = {
    "T": 4, "N": 4, "I": 2, "d": 8, "d_S": 8, "d_h": 8, "d_gating": 2, "k": 1, "j": 2, "N_L": 2,
    "vocab": 3, "words": 2, "train_samples": 8, "eval_samples": 4, "steps": 2, "batch_size": 2,
    "log_interval": 1, "train_acc_samples": 4,
}


class TestArmOverrides(unittest.TestCase):

    def test_overrides(self):
        self.assertEqual(arm_overrides("gating-dim", "16"), {"d_gating": 16})
        self.assertEqual(arm_overrides("gating-dim", "none"), {"mechanism": "ssl"})
        self.assertEqual(arm_overrides("mechanism", "conv1d"), {"mechanism": "conv1d"})
        self.assertEqual(arm_overrides("ssl-position", "penultimate"), {"ssl_position": "penultimate"})
        self.assertEqual(arm_overrides("gamma", "0.05"), {"gamma": 0.05})

    def test_unknown_sweep(self):
        with self.assertRaises(ConfigError):
            arm_overrides("depth", "3")
        with self.assertRaises(ConfigError):
            AblationRunner(RunConfig(TINY_RUN), "depth")

    def test_default_values(self):
        runner = AblationRunner(RunConfig(TINY_RUN), "ssl-position")
        self.assertEqual(runner.values, list(DEFAULT_SWEEPS["ssl-position"]))

    def test_invalid_arm_rejected_up_front(self):
        # d_gating 必须小于 d=8
        with self.assertRaises(ConfigError):
            AblationRunner(RunConfig(TINY_RUN), "gating-dim", ["8"])


class TestAblationRunner(unittest.TestCase):

    def test_run_gamma_sweep(self):
        rows = AblationRunner(RunConfig(TINY_RUN), "gamma", ["0", "0.005"], threads=1).run()
        self.assertEqual([r.value for r in rows], ["0", "0.005"])
        for row in rows:
            self.assertTrue(0.0 <= row.final_train_acc <= 1.0)
            self.assertTrue(0.0 <= row.eval_acc <= 1.0)

    def test_threads_do_not_change_rows(self):
        values = ["gated-ssl", "none"]
        serial = AblationRunner(RunConfig(TINY_RUN), "mechanism", values, threads=1).run()
        parallel = AblationRunner(RunConfig(TINY_RUN), "mechanism", values, threads=2).run()
        self.assertEqual(serial, parallel)

    def test_csv(self):
        rows = [AblationRow("gated-ssl", 0.5, 0.25), AblationRow("none", 1.0, 0.75)]
        self.assertEqual(AblationRunner.to_csv(rows),
                         "value,final_train_acc,eval_acc\ngated-ssl,0.5,0.25\nnone,1.0,0.75\n")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "ablate.csv")
            AblationRunner.write(rows, path)
            with open(path, "r", encoding="utf-8") as f:
                self.assertEqual(f.read().splitlines()[0], "value,final_train_acc,eval_acc")


@unittest.skipUnless(os.environ.get("GSMT_SLOW_TESTS"), "set GSMT_SLOW_TESTS=1 to run training acceptance")
class TestGatingAblation(unittest.TestCase):

    def test_removing_the_gate_costs_accuracy(self):
        toy = RunConfig.load_config(AppConfig.preset_path("toy"))
        gated, ungated = [], []
        for seed in (7, 8, 9):
            rows = AblationRunner(toy.copy(seed=seed), "gating-dim", ["16", "none"]).run()
            by_value = {row.value: row.eval_acc for row in rows}
            gated.append(by_value["16"])
            ungated.append(by_value["none"])
        self.assertLessEqual(sum(ungated) / 3, sum(gated) / 3 - 0.02, f"gated {gated}, ungated {ungated}")


if __name__ == '__main__':
    unittest.main()
