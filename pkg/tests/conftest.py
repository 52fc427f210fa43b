"""Defines PyTest configuration for the project."""

import random
from pathlib import Path

import numpy as np
import pytest
from _pytest.python import Function

from inviv.conf import SEED_ENV_VAR, Settings


@pytest.fixture(autouse=True)
def set_random_seed() -> None:
    random.seed(1337)
    np.random.seed(1337)


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("INVIV_CONFIG_DIR", str(tmp_path / "config"))
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    Settings.load.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1337)


def pytest_collection_modifyitems(items: list[Function]) -> None:
    items.sort(key=lambda x: x.get_closest_marker("slow") is not None)
