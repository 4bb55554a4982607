# -*- coding: UTF-8 -*-
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch, MagicMock

# Ensure the logger is mocked before config is imported so that loading presets
# does not write to the real log file.
mock_logger = MagicMock()
patcher = patch('utils.logger.logger', mock_logger)
patcher.start()

from app_config import AppConfig
from config import GsmtConfig, RunConfig, SyntheticSpec
from utils.errors import ConfigError


class TestRunConfig(unittest.TestCase):

    def setUp(self):
        """Each test gets its own scratch directory."""
        self.test_config_dir = tempfile.mkdtemp(prefix='gsmt_config_')
        self.test_config_file = os.path.join(self.test_config_dir, 'run.cfg')
        mock_logger.reset_mock()

    def tearDown(self):
        shutil.rmtree(self.test_config_dir, ignore_errors=True)

    def test_defaults(self):
        config = RunConfig()
        self.assertEqual(config.get_config_value("T"), 16)
        self.assertEqual(config.get_config_value("mechanism"), "gated-ssl")
        self.assertEqual(config.get_config_value("gamma"), 0.005)
        self.assertEqual(config.get_config_value("train_data"), "")

    def test_parse_text_with_comments_and_types(self):
        text = "# 注释\nT = 32   # 帧数\n\nlearning_rate = 0.1\nmechanism = conv1d\ngamma = 0\n"
        config = RunConfig.parse_text(text)
        self.assertEqual(config.get_config_value("T"), 32)
        self.assertIsInstance(config.get_config_value("T"), int)
        self.assertEqual(config.get_config_value("learning_rate"), 0.1)
        self.assertEqual(config.get_config_value("mechanism"), "conv1d")
        self.assertEqual(config.get_config_value("gamma"), 0.0)
        self.assertIsInstance(config.get_config_value("gamma"), float)

    def test_parse_errors_are_collected(self):
        text = "T = sixteen\nunknown_key = 1\nno equals sign\n"
        with self.assertRaises(ConfigError) as ctx:
            RunConfig.parse_text(text, source="bad.cfg")
        message = str(ctx.exception)
        self.assertIn("bad.cfg", message)
        self.assertIn("line 1", message)
        self.assertIn("unknown key 'unknown_key'", message)
        self.assertIn("line 3", message)

    def test_update_config(self):
        config = RunConfig()
        self.assertIs(config.update_config({"steps": "10"}), config)
        self.assertEqual(config.get_config_value("steps"), 10)
        with self.assertRaises(ConfigError):
            config.update_config({"depth": 3})
        with self.assertRaises(ConfigError):
            config.update_config({"steps": 2.5})
        with self.assertRaises(ConfigError):
            config.get_config_value("depth")

    def test_copy_leaves_original(self):
        config = RunConfig({"steps": 5})
        other = config.copy(steps=7)
        self.assertEqual(config.get_config_value("steps"), 5)
        self.assertEqual(other.get_config_value("steps"), 7)

    def test_save_and_load_round_trip(self):
        config = RunConfig({"T": 8, "I": 4, "k": 2, "mechanism": "self-attention"})
        config.save_config(self.test_config_file)
        loaded = RunConfig.load_config(self.test_config_file)
        self.assertEqual(loaded.get_config(), config.get_config())
        self.assertEqual(loaded.path, self.test_config_file)

    def test_load_missing_file(self):
        with self.assertRaises(ConfigError):
            RunConfig.load_config(os.path.join(self.test_config_dir, 'absent.cfg'))

    def test_presets_parse(self):
        for name in ("toy", "full"):
            config = RunConfig.load_config(AppConfig.preset_path(name))
            config.model_config()
        toy = RunConfig.load_config(AppConfig.preset_path("toy"))
        self.assertEqual(toy.get_config_value("steps"), 1500)
        self.assertEqual(toy.get_config_value("alignment_loss"), "c3-unit")
        self.assertEqual(toy.get_config_value("grad_clip"), 5.0)
        self.assertEqual(toy.get_config(), RunConfig().get_config())
        self.assertEqual(toy.model_config().layout.N_f, 2)

    def test_model_config_validation(self):
        with self.assertRaises(ConfigError):
            RunConfig({"k": 9}).model_config()
        with self.assertRaises(ConfigError):
            RunConfig({"mechanism": "lstm"}).model_config()

    def test_synthetic_spec_splits(self):
        config = RunConfig({"train_samples": 10, "eval_samples": 3, "data_seed": 1})
        train, evaluation = config.synthetic_spec("train"), config.synthetic_spec("eval")
        self.assertEqual((train.samples, evaluation.samples), (10, 3))
        self.assertNotEqual(train.seed, evaluation.seed)
        self.assertEqual(train.window_segments, config.get_config_value("k"))


class TestGsmtConfig(unittest.TestCase):

    def test_defaults_are_valid(self):
        config = GsmtConfig()
        self.assertEqual(config.visual_mechanism, "gated-ssl")
        self.assertIsNone(config.ssl_layer)
        self.assertEqual(config.c3_layer_index, 2)
        self.assertEqual(config.answer_width, 64)

    def test_penultimate_position(self):
        config = GsmtConfig(ssl_position="penultimate")
        self.assertEqual(config.visual_mechanism, "none")
        self.assertEqual(config.ssl_layer, 0)
        with self.assertRaises(ConfigError):
            GsmtConfig(ssl_position="penultimate", N_L=1)
        with self.assertRaises(ConfigError):
            GsmtConfig(ssl_position="penultimate", mechanism="conv1d")

    def test_invalid_values(self):
        for overrides in ({"gamma": -1.0}, {"temperature": 0.0}, {"j": 17}, {"d_gating": 64},
                          {"c3_layer": 3}, {"alignment_loss": "ot"}, {"T": 12}):
            with self.assertRaises(ConfigError, msg=str(overrides)):
                GsmtConfig(**overrides)

    def test_gating_width_ignored_without_ssl(self):
        self.assertEqual(GsmtConfig(mechanism="self-attention", d_gating=64).d_gating, 64)


class TestSyntheticSpec(unittest.TestCase):

    def test_window_frames(self):
        self.assertEqual(SyntheticSpec().window_frames, 8)
        self.assertEqual(SyntheticSpec(T=8, I=8, window_segments=2).window_frames, 2)

    def test_temporal_order_needs_two_segments(self):
        with self.assertRaises(ConfigError):
            SyntheticSpec(task="temporal-order", T=4, I=1, window_segments=1)


class TestAppConfig(unittest.TestCase):

    def test_threads_from_environment(self):
        with patch.dict(os.environ, {'GSMT_THREADS': '4'}):
            self.assertEqual(AppConfig.get_threads(), 4)
        with patch.dict(os.environ, {'GSMT_THREADS': '0'}):
            self.assertEqual(AppConfig.get_threads(), 1)
        with patch.dict(os.environ, {'GSMT_THREADS': 'many'}):
            self.assertEqual(AppConfig.get_threads(), AppConfig.DEFAULT_THREADS)

    def test_log_level_from_environment(self):
        with patch.dict(os.environ, {'GSMT_LOG_LEVEL': 'debug'}):
            self.assertEqual(AppConfig.get_log_level(), 'DEBUG')

    def test_preset_path(self):
        self.assertEqual(AppConfig.preset_path('toy'), os.path.join(AppConfig.CONFIG_DIR, 'toy.cfg'))


if __name__ == '__main__':
    unittest.main()
