"""Unit tests for configuration loading."""

import pytest

from coleclip_desk.config import Config, ConfigError


class TestConfig:
    """Tests for Config."""

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("train:\n  alpha: 0.2\n  epochs: 3\nstream:\n  num_tasks: 2\n")
        config = Config(str(path))
        assert config.get("train.alpha") == 0.2
        assert config.get_train_config().epochs == 3
        assert config.get_stream_config().num_tasks == 2

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            Config(str(tmp_path / "missing.yaml"))

    def test_invalid_yaml_raises(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("train: [unclosed\n")
        with pytest.raises(ConfigError, match="Invalid YAML"):
            Config(str(path))

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError, match="must be a mapping"):
            Config.from_dict({"train": [1, 2]})

    def test_unknown_key_raises_config_error(self):
        config = Config.from_dict({"train": {"learning_rat": 0.1}})
        with pytest.raises(ConfigError, match="train"):
            config.get_train_config()

    def test_invalid_value_raises_config_error(self):
        config = Config.from_dict({"train": {"tau": -1}})
        with pytest.raises(ConfigError, match="tau"):
            config.get_train_config()

    def test_defaults_from_empty_mapping(self):
        config = Config.from_dict({})
        assert config.get_train_config().alpha == 0.1
        assert config.get_experiment_config().methods == ("coleclip", "frozen_baseline")
        assert config.get_logging_config()["level"] == "INFO"

    def test_overrides_parse_yaml_scalars(self):
        config = Config.from_dict({})
        config.apply_overrides(["train.alpha=0.3", "train.use_task_prompts=false", "experiment.task_order=[2, 1]"])
        assert config.get("train.alpha") == 0.3
        assert config.get("train.use_task_prompts") is False
        assert config.get("experiment.task_order") == [2, 1]

    def test_malformed_override_raises(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            Config.from_dict({}).apply_overrides(["train.alpha"])

    def test_seed_reaches_every_seeded_section(self):
        config = Config.from_dict({"experiment": {"seed": 4}})
        assert config.get_stream_config().seed == 4
        assert config.get_backbone_config().seed == 4
        config.apply_seed(9)
        assert config.get_train_config().seed == 9
        assert config.get_experiment_config().seed == 9

    def test_explicit_section_seed_wins(self):
        config = Config.from_dict({"experiment": {"seed": 4}, "stream": {"seed": 11}})
        assert config.get_stream_config().seed == 11

    def test_manifest_moves_to_experiment(self):
        config = Config.from_dict({"stream": {"manifest": "data/manifest.yaml"}})
        assert config.get_experiment_config().manifest == "data/manifest.yaml"

    def test_sweep_grid_is_flattened(self):
        config = Config.from_dict({"sweep": {"train": {"alpha": [0.05, 0.1], "gamma": [0.5, 0.7]}}})
        assert config.get_sweep_config() == {"train.alpha": [0.05, 0.1], "train.gamma": [0.5, 0.7]}

    def test_copy_is_independent(self):
        config = Config.from_dict({"train": {"alpha": 0.1}})
        clone = config.copy()
        clone.set("train.alpha", 0.5)
        assert config.get("train.alpha") == 0.1

    def test_getitem_missing_key(self):
        with pytest.raises(KeyError):
            Config.from_dict({})["train.alpha"]
