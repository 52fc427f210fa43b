"""Tests the settings file and the structured config loader."""

from pathlib import Path

import pytest

from inviv.conf import (
    SEED_ENV_VAR,
    Settings,
    from_container,
    get_path,
    load_structured,
    resolve_seed,
    to_container,
)
from inviv.errors import ConfigurationError
from inviv.pipeline.training import TrainConfig
from inviv.simgen import (
    CounterexampleName,
    CounterexampleSpec,
    MixingKind,
    MixingSpec,
    NoiseLaw,
    ScmSpec,
    d2_spec,
    three_env_spec,
)


def test_builtin_specs_match_the_factories() -> None:
    assert load_structured(ScmSpec, "builtin:d2") == d2_spec()
    assert load_structured(ScmSpec, "builtin:d3_threeenv") == three_env_spec()


def test_builtin_mixings() -> None:
    assert load_structured(MixingSpec, "builtin:poly2") == MixingSpec(degree=2)
    mlp = load_structured(MixingSpec, "builtin:mlp")
    assert mlp.kind == MixingKind.INVERTIBLE_MLP
    assert mlp.label == "mlp"


def test_builtin_counterexample() -> None:
    spec = load_structured(CounterexampleSpec, "builtin:c4")
    assert spec.counterexample == CounterexampleName.EFFICIENCY_LOSS_C4
    assert spec.variances == {}


def test_overrides_skip_unset_values() -> None:
    config = load_structured(TrainConfig, "builtin:d2_default", {"epochs": 3, "lr": None})
    assert config.epochs == 3
    assert config.lr == pytest.approx(1e-3)
    assert config.lambda2_grid == [0.0, 1.0, 5.0, 10.0]


def test_unknown_key_is_rejected(tmp_path: Path) -> None:
    path = tmp_path / "spec.yaml"
    path.write_text("p: 2\nbogus: 1\n")
    with pytest.raises(ConfigurationError, match="bogus"):
        load_structured(ScmSpec, path)


def test_mistyped_value_is_rejected(tmp_path: Path) -> None:
    path = tmp_path / "spec.yaml"
    path.write_text("noise_law: cauchy\n")
    with pytest.raises(ConfigurationError):
        load_structured(ScmSpec, path)


def test_unparseable_yaml(tmp_path: Path) -> None:
    path = tmp_path / "spec.yaml"
    path.write_text("p: [1, 2\n")
    with pytest.raises(ConfigurationError):
        load_structured(ScmSpec, path)


def test_missing_sources() -> None:
    with pytest.raises(ConfigurationError, match="Unknown builtin"):
        load_structured(ScmSpec, "builtin:nope")
    with pytest.raises(ConfigurationError, match="not found"):
        load_structured(ScmSpec, "/does/not/exist.yaml")


def test_container_round_trip() -> None:
    spec = ScmSpec(noise_law=NoiseLaw.LAPLACE, env_size_ratio=[1.0, 2.0])
    data = to_container(spec)
    assert data["noise_law"] == "laplace"
    assert from_container(ScmSpec, data) == spec
    with pytest.raises(ConfigurationError):
        from_container(ScmSpec, {"unknown": 1})


def test_seed_environment_variable(monkeypatch: pytest.MonkeyPatch) -> None:
    assert resolve_seed(None) == 0
    assert resolve_seed(5) == 5
    monkeypatch.setenv(SEED_ENV_VAR, "11")
    assert resolve_seed(5) == 11
    monkeypatch.setenv(SEED_ENV_VAR, "eleven")
    with pytest.raises(ConfigurationError):
        resolve_seed(5)


def test_settings_directory_is_created() -> None:
    assert not get_path().exists()
    with pytest.warns(UserWarning, match="Creating it now"):
        settings = Settings.load()
    assert get_path().is_dir()
    assert settings.experiments.desk.epochs == 100
    assert settings.experiments.desk.lr == pytest.approx(3e-3)
    assert settings.experiments.full.lr == pytest.approx(1e-3)
    assert settings.experiments.full.seeds == 20
