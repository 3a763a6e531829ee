"""Tests for the command-line entry point."""

import pytest
import yaml

from coleclip_desk.main import (
    EXIT_CONFIG,
    EXIT_DIVERGENCE,
    EXIT_FAILURE,
    EXIT_OK,
    build_parser,
    load_config,
    main,
)
from coleclip_desk.stream import load_manifest


@pytest.fixture
def config_file(small_config, tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(small_config.to_dict()))
    return path


class TestLoadConfig:
    """Tests for command-line overrides."""

    def test_flags_override_file(self, config_file, tmp_path):
        args = build_parser().parse_args(
            [
                "run",
                "--config", str(config_file),
                "--seed", "9",
                "--output", str(tmp_path / "elsewhere"),
                "--order", "2,1",
                "--set", "train.alpha=0.3",
                "--no-plots",
            ]
        )
        config = load_config(args)
        assert config.get("train.alpha") == 0.3
        assert config.get("stream.seed") == 9
        experiment = config.get_experiment_config()
        assert experiment.seed == 9
        assert experiment.task_order == [2, 1]
        assert experiment.output_dir == str(tmp_path / "elsewhere")
        assert experiment.plots is False

    def test_deterministic_flag(self, config_file):
        args = build_parser().parse_args(["run", "--config", str(config_file), "--deterministic"])
        config = load_config(args)
        assert config.get_train_config().deterministic


class TestMain:
    """Exit codes and side effects of the subcommands."""

    def test_generate_writes_manifest(self, config_file, tmp_path):
        assert main(["generate", "--config", str(config_file)]) == EXIT_OK
        stream = load_manifest(tmp_path / "run" / "manifest.yaml")
        assert stream.total_tasks == 2

    def test_run_then_report(self, config_file, tmp_path):
        assert main(["run", "--config", str(config_file)]) == EXIT_OK
        (tmp_path / "run" / "summary.md").unlink()
        assert main(["report", "--config", str(config_file), str(tmp_path / "run")]) == EXIT_OK
        assert (tmp_path / "run" / "summary.md").exists()

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
        assert "Configuration error" in capsys.readouterr().err

    def test_invalid_section(self, config_file):
        code = main(["run", "--config", str(config_file), "--set", "train.gamma=0"])
        assert code == EXIT_CONFIG

    def test_invalid_order(self, config_file):
        assert main(["run", "--config", str(config_file), "--order", "1,1"]) == EXIT_CONFIG

    def test_malformed_override(self, config_file):
        assert main(["run", "--config", str(config_file), "--set", "train.alpha"]) == EXIT_CONFIG

    def test_divergence(self, config_file, capsys):
        code = main(["run", "--config", str(config_file), "--set", "train.learning_rate=.inf"])
        assert code == EXIT_DIVERGENCE
        assert "diverged" in capsys.readouterr().err

    def test_resume(self, config_file, tmp_path):
        assert main(["run", "--config", str(config_file)]) == EXIT_OK
        checkpoint = tmp_path / "run" / "checkpoints" / "coleclip" / "step-1.json"
        assert main(["resume", "--config", str(config_file), "--checkpoint", str(checkpoint)]) == EXIT_OK

    def test_empty_sweep(self, config_file):
        assert main(["sweep", "--config", str(config_file)]) == EXIT_CONFIG

    def test_runtime_value_error_is_a_failure(self, config_file, monkeypatch, capsys):
        def broken_run(config):
            raise ValueError("operands could not be broadcast together")

        monkeypatch.setattr("coleclip_desk.main.run_experiment", broken_run)
        assert main(["run", "--config", str(config_file)]) == EXIT_FAILURE
        assert "Configuration error" not in capsys.readouterr().err

    @pytest.mark.slow
    def test_verify(self, config_file):
        assert main(["verify", "--config", str(config_file), "--gradient-seeds", "2"]) == EXIT_OK
