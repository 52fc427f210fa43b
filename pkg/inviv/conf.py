"""Defines the user settings and the structured config loader."""

import functools
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, TypeVar

import yaml
from omegaconf import II, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from inviv.artifacts import ARTIFACTS_DIR, builtin_names
from inviv.errors import ConfigurationError

SETTINGS_FILE_NAME = "settings.yaml"
BUILTIN_PREFIX = "builtin:"
SEED_ENV_VAR = "INVIV_SEED"

T = TypeVar("T")


def get_path() -> Path:
    if "INVIV_CONFIG_DIR" in os.environ:
        return Path(os.environ["INVIV_CONFIG_DIR"]).expanduser().resolve()
    return Path("~/.inviv/").expanduser().resolve()


@dataclass
class ScaleSettings:
    n_train: int = 4_000
    n_val: int = 1_000
    epochs: int = 100
    batch_size: int = 500
    lr: float = 3e-3
    seeds: int = 5


@dataclass
class ExperimentSettings:
    desk: ScaleSettings = field(default_factory=ScaleSettings)
    full: ScaleSettings = field(
        default_factory=lambda: ScaleSettings(
            n_train=10_000, n_val=2_000, epochs=400, batch_size=500, lr=1e-3, seeds=20
        )
    )
    jobs: int = field(default=1)
    runs_dir: str = field(default=II("oc.env:INVIV_RUNS_DIR,'./runs'"))


@dataclass
class Settings:
    experiments: ExperimentSettings = field(default_factory=ExperimentSettings)

    def save(self) -> None:
        (dir_path := get_path()).mkdir(parents=True, exist_ok=True)
        with open(dir_path / SETTINGS_FILE_NAME, "w") as f:
            OmegaConf.save(config=self, f=f)

    @functools.lru_cache
    @staticmethod
    def load() -> "Settings":
        config = OmegaConf.structured(Settings)
        if not (dir_path := get_path()).exists():
            warnings.warn(f"Settings directory does not exist: {dir_path}. Creating it now.")
            dir_path.mkdir(parents=True)
            OmegaConf.save(config, dir_path / SETTINGS_FILE_NAME)
        else:
            try:
                with open(dir_path / SETTINGS_FILE_NAME, "r") as f:
                    raw_settings = OmegaConf.load(f)
                    config = OmegaConf.merge(config, raw_settings)
            except Exception as e:
                warnings.warn(f"Failed to load settings: {e}")
        return config


def resolve_config_path(source: str | Path) -> Path:
    """Maps ``builtin:<name>`` to the packaged YAML file; other sources are plain paths."""
    text = str(source)
    if text.startswith(BUILTIN_PREFIX):
        name = text[len(BUILTIN_PREFIX) :]
        if name not in builtin_names():
            raise ConfigurationError(f"Unknown builtin config {name!r}; choose from {', '.join(builtin_names())}")
        return ARTIFACTS_DIR / f"{name}.yaml"
    path = Path(source).expanduser()
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    return path


def load_structured(
    cls: type[T],
    source: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> T:
    """Loads a dataclass config from YAML, rejecting unknown keys and mistyped values.

    Args:
        cls: The config dataclass.
        source: A YAML path or a ``builtin:<name>`` alias; defaults only when omitted.
        overrides: Values applied on top of the file, e.g. from CLI flags.

    Returns:
        An instance of ``cls``.

    Raises:
        ConfigurationError: On parse errors, unknown keys or type errors; the message names the field.
    """
    try:
        config = OmegaConf.structured(cls)
        if source is not None:
            path = resolve_config_path(source)
            config = OmegaConf.merge(config, OmegaConf.load(path))
        if overrides:
            config = OmegaConf.merge(config, {k: v for k, v in overrides.items() if v is not None})
        return OmegaConf.to_object(config)  # type: ignore[return-value]
    except OmegaConfBaseException as e:
        raise ConfigurationError(f"Invalid {cls.__name__} config ({source}): {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Could not parse {source}: {e}") from e


def to_container(obj: Any) -> dict[str, Any]:  # noqa: ANN401
    """Converts a config dataclass to plain YAML/JSON types."""
    return OmegaConf.to_container(OmegaConf.structured(obj), enum_to_str=True)  # type: ignore[return-value]


def from_container(cls: type[T], data: Mapping[str, Any]) -> T:
    try:
        return OmegaConf.to_object(OmegaConf.merge(OmegaConf.structured(cls), dict(data)))  # type: ignore[return-value]
    except OmegaConfBaseException as e:
        raise ConfigurationError(f"Invalid {cls.__name__} record: {e}") from e


def resolve_seed(seed: int | None, default: int = 0) -> int:
    """The ``INVIV_SEED`` environment variable takes precedence over an explicit seed."""
    if (value := os.environ.get(SEED_ENV_VAR)) is not None:
        try:
            return int(value)
        except ValueError as e:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {value!r}") from e
    return default if seed is None else seed
