"""Configuration loader for coleclip-desk experiments."""

import copy
import logging
import os
from typing import Any, Dict, Iterable, List, Optional

import yaml

from .models import BackboneConfig, ExperimentConfig, StreamConfig, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SEEDED_SECTIONS = ("stream", "backbone", "train")


def search_paths() -> List[str]:
    return [
        "coleclip.yaml",
        "config.yaml",
        os.path.expanduser("~/.config/coleclip-desk/config.yaml"),
    ]


def default_config_path() -> Optional[str]:
    """First existing file among the default config locations, if any."""
    for path in search_paths():
        if os.path.isfile(path):
            return path
    return None


class ConfigError(Exception):
    """Raised when configuration is invalid or cannot be loaded."""

    pass


class Config:
    """Experiment configuration manager."""

    def __init__(self, config_path: Optional[str] = None, data: Optional[Dict[str, Any]] = None):
        """
        Initialize configuration.

        Args:
            config_path: Path to config file. If None and no data is given, uses default locations.
            data: Already-parsed configuration mapping (skips file loading).
        """
        self._data: Dict[str, Any] = {}
        if data is not None:
            self.config_path = config_path
            self._data = copy.deepcopy(data)
            self._validate()
        else:
            self.config_path = config_path or self._find_config_file()
            self.load()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        """Build a configuration from an in-memory mapping."""
        return cls(data=data)

    def _find_config_file(self) -> str:
        """
        Find the configuration file in default locations.

        Returns:
            Path to config file

        Raises:
            ConfigError: If no config file is found
        """
        path = default_config_path()
        if path is not None:
            logger.info(f"Found config file at: {path}")
            return path

        raise ConfigError(f"No configuration file found. Searched: {', '.join(search_paths())}")

    def load(self) -> None:
        """
        Load configuration from file.

        Raises:
            ConfigError: If config file cannot be loaded or is invalid
        """
        try:
            logger.info(f"Loading configuration from: {self.config_path}")
            with open(self.config_path) as f:
                self._data = yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {self.config_path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in config file: {e}") from e
        except Exception as e:
            raise ConfigError(f"Failed to load config: {e}") from e

        self._validate()

    def _validate(self) -> None:
        """
        Validate the configuration data.

        Raises:
            ConfigError: If configuration is invalid
        """
        if not isinstance(self._data, dict):
            raise ConfigError("Configuration root must be a mapping")

        for section, value in self._data.items():
            if value is not None and not isinstance(value, dict):
                raise ConfigError(f"Section '{section}' must be a mapping, got {type(value).__name__}")

        stream = self._data.get("stream") or {}
        experiment = self._data.get("experiment") or {}
        if "manifest" in stream and "manifest" not in experiment:
            experiment["manifest"] = stream.pop("manifest")
            self._data["experiment"] = experiment

    def set(self, key: str, value: Any) -> None:
        """
        Set a configuration value by dotted key, creating sections as needed.

        Args:
            key: Dotted key, e.g. 'train.alpha'
            value: Value to store
        """
        keys = key.split(".")
        node = self._data
        for k in keys[:-1]:
            child = node.get(k)
            if not isinstance(child, dict):
                child = {}
                node[k] = child
            node = child
        node[keys[-1]] = value

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        """
        Apply 'section.key=value' overrides; values are parsed as YAML scalars.

        Raises:
            ConfigError: If an override is malformed
        """
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"Override must look like 'section.key=value', got '{item}'")
            try:
                value = yaml.safe_load(raw)
            except yaml.YAMLError as e:
                raise ConfigError(f"Invalid override value in '{item}': {e}") from e
            logger.debug(f"Override {key.strip()} = {value!r}")
            self.set(key.strip(), value)
        self._validate()

    def apply_seed(self, seed: int) -> None:
        """Use one seed for the experiment and every seeded section."""
        self.set("experiment.seed", seed)
        for section in SEEDED_SECTIONS:
            self.set(f"{section}.seed", seed)

    def _section(self, name: str) -> Dict[str, Any]:
        data = dict(self._data.get(name) or {})
        if name in SEEDED_SECTIONS and "seed" not in data:
            data["seed"] = self.get("experiment.seed", 0)
        return data

    def _build(self, cls, name: str):
        try:
            return cls(**self._section(name))
        except TypeError as e:
            raise ConfigError(f"Unknown or missing key in '{name}' section: {e}") from e
        except ValueError as e:
            raise ConfigError(f"Invalid '{name}' section: {e}") from e

    def get_stream_config(self) -> StreamConfig:
        """
        Get stream generation configuration.

        Returns:
            StreamConfig object
        """
        return self._build(StreamConfig, "stream")

    def get_backbone_config(self) -> BackboneConfig:
        """
        Get frozen backbone configuration.

        Returns:
            BackboneConfig object
        """
        return self._build(BackboneConfig, "backbone")

    def get_train_config(self) -> TrainConfig:
        """
        Get training configuration.

        Returns:
            TrainConfig object
        """
        return self._build(TrainConfig, "train")

    def get_experiment_config(self) -> ExperimentConfig:
        """
        Get experiment configuration.

        Returns:
            ExperimentConfig object
        """
        return self._build(ExperimentConfig, "experiment")

    def get_logging_config(self) -> Dict[str, Any]:
        """
        Get logging configuration.

        Returns:
            Dictionary with logging settings
        """
        return self._data.get("logging") or {"level": "INFO", "format": DEFAULT_LOG_FORMAT}

    def get_sweep_config(self) -> Dict[str, list]:
        """
        Get hyperparameter grid lists, keyed by dotted config key.

        Returns:
            Dictionary mapping e.g. 'train.alpha' to a list of values

        Raises:
            ConfigError: If a grid entry is not a list
        """
        sweep = self._data.get("sweep") or {}
        items = []
        for section, values in sweep.items():
            if isinstance(values, dict):
                items.extend((f"{section}.{key}", grid) for key, grid in values.items())
            else:
                items.append((section, values))
        flat: Dict[str, list] = {}
        for key, grid in items:
            if not isinstance(grid, list):
                raise ConfigError(f"Sweep values for '{key}' must be a list, got {type(grid).__name__}")
            flat[key] = grid
        return flat

    def to_dict(self) -> Dict[str, Any]:
        """Deep copy of the raw configuration mapping."""
        return copy.deepcopy(self._data)

    def copy(self) -> "Config":
        return Config(self.config_path, data=self._data)

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value by key.

        Args:
            key: Configuration key (supports dot notation, e.g., 'train.alpha')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key.split(".")
        value = self._data

        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
                if value is None:
                    return default
            else:
                return default

        return value if value is not None else default

    def __getitem__(self, key: str) -> Any:
        """Get configuration value using dictionary syntax."""
        value = self.get(key)
        if value is None:
            raise KeyError(f"Configuration key not found: {key}")
        return value

    def __repr__(self) -> str:
        """String representation of config."""
        return f"Config(path={self.config_path})"
