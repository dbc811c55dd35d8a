import json
import os
import tempfile
import unittest

from src.config import EXPERIMENT_IDS, ExperimentConfig, config_from_dict, load_config
from src.errors import ConfigError
from src.fno import FnoHyperparams


class TestExperimentConfig(unittest.TestCase):
    """Test cases for the experiment table and config validation."""

    def test_defaults_validate(self):
        config = load_config()
        self.assertIs(config.validate(), config)
        self.assertEqual(config.experiment, "exp1")
        self.assertEqual(config.n, 100)

    def test_experiment_table(self):
        self.assertEqual(EXPERIMENT_IDS, ("exp1", "exp2", "exp3", "exp4", "exp5a", "exp5b", "exp6"))
        self.assertEqual(ExperimentConfig(experiment="exp5a").effective_noise, 0.2)
        self.assertEqual(ExperimentConfig(experiment="exp5b").effective_factor, 5)
        self.assertEqual(ExperimentConfig(experiment="exp5b").train_points, 20)
        self.assertTrue(ExperimentConfig(experiment="exp5b").effective_baselines)
        self.assertFalse(ExperimentConfig(experiment="exp2").effective_baselines)

    def test_threshold_sweep(self):
        self.assertEqual(ExperimentConfig(experiment="exp6").effective_thresholds, (0.1, 0.01, 0.001))
        self.assertEqual(ExperimentConfig(experiment="exp1").effective_thresholds, (0.01,))
        self.assertEqual(ExperimentConfig(thresholds=(0.5,)).effective_thresholds, (0.5,))

    def test_output_channels_resolved(self):
        self.assertEqual(config_from_dict({"experiment": "exp4"}).fno.out_channels, 2)
        self.assertEqual(config_from_dict({"experiment": "exp6"}).fno.out_channels, 2)
        self.assertEqual(config_from_dict({"experiment": "exp2"}).fno.out_channels, 1)

    def test_library_default_by_state_count(self):
        config = ExperimentConfig()
        self.assertEqual(config.library_config(1).max_degree, 2)
        self.assertEqual(config.library_config(2).max_degree, 3)

    def test_unknown_experiment(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({"experiment": "exp9"})
        self.assertIn("exp5a", str(ctx.exception))

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            config_from_dict({"learning_rate": 0.1})

    def test_invalid_nested_value(self):
        with self.assertRaises(ConfigError):
            config_from_dict({"fno": {"layers": 0}})

    def test_empty_training_set(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(n_train=0).validate()

    def test_stage2_exceeds_tests(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(n_test=10, stage2_count=20).validate()

    def test_too_many_modes(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(n=40, fno=FnoHyperparams(modes=32)).validate()

    def test_bad_latent_source(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(latent_source="guessed").validate()

    def test_regression_penalty_ranges(self):
        ExperimentConfig(thresholds=(0.0,)).validate()
        for bad in ({"thresholds": (-0.01,)}, {"lasso_alpha": 0.0}):
            with self.assertRaises(ConfigError):
                ExperimentConfig(**bad).validate()

    def test_library_scheme_from_dict(self):
        self.assertEqual(config_from_dict({"library": {"scheme": "node"}}).library.scheme, "node")
        with self.assertRaises(ConfigError):
            config_from_dict({"library": {"scheme": "spline"}})

    def test_overrides_win(self):
        config = config_from_dict({"seed": 3}, seed=9, threads=None)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.threads, 1)

    def test_to_dict_omits_output_dir(self):
        data = ExperimentConfig(experiment="exp6").to_dict()
        self.assertNotIn("output_dir", data)
        self.assertEqual(data["thresholds"], [0.1, 0.01, 0.001])
        self.assertEqual(data["fno"]["width"], 64)


class TestLoadConfig(unittest.TestCase):

    def test_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump({"experiment": "exp3", "n_train": 50, "fno": {"width": 8, "modes": 4},
                           "library": {"max_degree": 2}}, f)
            config = load_config(path, seed=5)
        self.assertEqual(config.n_train, 50)
        self.assertEqual(config.fno.width, 8)
        self.assertEqual(config.fno.out_channels, 2)
        self.assertEqual(config.library_config(2).max_degree, 2)
        self.assertEqual(config.seed, 5)

    def test_invalid_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            with open(path, "w", encoding="utf-8") as f:
                f.write("{not json")
            with self.assertRaises(ConfigError):
                load_config(path)

    def test_non_object(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            with open(path, "w", encoding="utf-8") as f:
                f.write("[1, 2]")
            with self.assertRaises(ConfigError):
                load_config(path)


if __name__ == '__main__':
    unittest.main()
