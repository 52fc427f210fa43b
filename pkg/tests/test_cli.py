"""Tests the command line interface end to end on small datasets."""

import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from inviv.cli import cli
from inviv.conf import SEED_ENV_VAR


def _simulate(runner: CliRunner, out: Path, *extra: str) -> None:
    result = runner.invoke(cli, ["simulate", "--n-train", "100", "--n-val", "50", "--out", str(out), *extra])
    assert result.exit_code == 0, result.output


def test_help_without_command() -> None:
    result = CliRunner().invoke(cli, [])
    assert result.exit_code == 0
    for command in ("simulate", "train", "estimate", "experiment"):
        assert command in result.output


def test_simulate_writes_manifest_and_checks(tmp_path: Path) -> None:
    runner = CliRunner()
    out = tmp_path / "data"
    _simulate(runner, out, "--seed", "3")
    assert sorted(p.name for p in out.iterdir()) == [
        "dataset.json",
        "env0_train.csv",
        "env0_val.csv",
        "env1_train.csv",
        "env1_val.csv",
        "manifest.json",
    ]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seeds"] == [3]
    assert set(manifest["outputs"]) == {p.name for p in out.iterdir()} - {"manifest.json"}

    base = ["simulate", "--n-train", "100", "--n-val", "50", "--out", str(out), "--check"]
    checked = runner.invoke(cli, [*base, "--seed", "3"])
    assert checked.exit_code == 0, checked.output
    assert "Check passed" in checked.output

    changed = runner.invoke(cli, [*base, "--seed", "4"])
    assert changed.exit_code == 1


def test_seed_environment_variable_wins(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(SEED_ENV_VAR, "7")
    out = tmp_path / "data"
    _simulate(CliRunner(), out, "--seed", "1")
    assert json.loads((out / "manifest.json").read_text())["seeds"] == [7]


def test_counterexample_has_train_split_only(tmp_path: Path) -> None:
    out = tmp_path / "c5"
    _simulate(CliRunner(), out, "--spec", "builtin:c5")
    assert sorted(p.name for p in out.glob("*.csv")) == ["env0_train.csv"]
    assert json.loads((out / "dataset.json").read_text())["counterexample"] == "collider_C5"


def test_usage_errors_exit_with_two(tmp_path: Path) -> None:
    runner = CliRunner()
    missing = runner.invoke(cli, ["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "model")])
    assert missing.exit_code == 2
    unknown = runner.invoke(cli, ["experiment", "--name", "bogus", "--out", str(tmp_path / "runs")])
    assert unknown.exit_code == 2
    assert "mixing_ablation" in unknown.output
    bad_spec = runner.invoke(cli, ["simulate", "--spec", "builtin:nope", "--out", str(tmp_path / "data")])
    assert bad_spec.exit_code == 2
    no_manifest = runner.invoke(cli, ["simulate", "--n-train", "10", "--out", str(tmp_path / "empty"), "--check"])
    assert no_manifest.exit_code == 2


def test_train_then_estimate(tmp_path: Path) -> None:
    runner = CliRunner()
    data, model, estimates = tmp_path / "data", tmp_path / "model", tmp_path / "estimates" / "results.csv"
    _simulate(runner, data)

    trained = runner.invoke(cli, ["train", "--data", str(data), "--out", str(model), "--epochs", "1"])
    assert trained.exit_code == 0, trained.output
    assert {"model.ckpt", "losses.csv", "identifiability.json", "manifest.json"} <= {p.name for p in model.iterdir()}
    assert len(pd.read_csv(model / "losses.csv")) == 1

    args = ["estimate", "--data", str(data), "--model", str(model / "model.ckpt"), "--out", str(estimates)]
    estimated = runner.invoke(cli, args)
    assert estimated.exit_code == 0, estimated.output
    frame = pd.read_csv(estimates)
    assert list(frame.columns) == ["method", "label", "coord", "theta_hat", "bias", "se", "min_sv_firststage", "status"]
    assert len(frame) == 2 * 8
    assert (estimates.parent / "manifest.json").is_file()

    rechecked = runner.invoke(cli, [*args, "--check"])
    assert rechecked.exit_code == 0, rechecked.output


def test_estimate_rejects_unknown_methods(tmp_path: Path) -> None:
    runner = CliRunner()
    data = tmp_path / "data"
    _simulate(runner, data)
    args = ["estimate", "--data", str(data), "--methods", "bogus", "--out", str(tmp_path / "e.csv")]
    result = runner.invoke(cli, args)
    assert result.exit_code == 2
