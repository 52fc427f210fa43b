"""Tests the dataset, checkpoint and manifest files."""

from pathlib import Path

import numpy as np
import pytest

from inviv import nn
from inviv.errors import ContractError, ShapeError
from inviv.schemas import RunManifest
from inviv.simgen import CounterexampleName, MixingSpec, Split, d2_spec, make_counterexample, simulate
from inviv.storage import (
    DATASET_SIDECAR,
    load_checkpoint,
    load_dataset,
    read_manifest_outputs,
    save_checkpoint,
    save_datasets,
    save_simulated,
    write_manifest,
)
from inviv.utils.checksum import calculate_sha256, combined_hash, hash_files


def test_simulated_dataset_round_trip_is_bit_exact(tmp_path: Path) -> None:
    out = tmp_path / "data"
    data = simulate(d2_spec(), MixingSpec(degree=2), n_train=25, n_val=5, seed=4)
    sidecar = save_simulated(out, data)
    assert sorted(f.path for f in sidecar.files) == [
        "env0_train.csv",
        "env0_val.csv",
        "env1_train.csv",
        "env1_val.csv",
    ]
    stored = load_dataset(out)
    assert stored.num_envs == 2
    np.testing.assert_array_equal(stored.theta, d2_spec().theta_vector())
    for original, loaded in zip([*data.train, *data.val], [*stored.train, *stored.val]):
        assert loaded.env == original.env and loaded.split == original.split
        for block in ("z", "d", "y", "w", "v", "h"):
            np.testing.assert_array_equal(getattr(loaded, block), getattr(original, block))


def test_counterexample_has_no_validation_split(tmp_path: Path) -> None:
    out = tmp_path
    ce = make_counterexample(CounterexampleName.COLLIDER_C5, n=12)
    save_datasets(out, [ce.dataset], [], spec={}, theta=ce.theta, seed=0, counterexample=ce.name.value)
    stored = load_dataset(out)
    assert stored.val == ()
    assert stored.sidecar.counterexample == "collider_C5"
    assert stored.train[0].split == Split.TRAIN


def test_missing_sidecar(tmp_path: Path) -> None:
    with pytest.raises(ContractError):
        load_dataset(tmp_path)


def test_missing_listed_file(tmp_path: Path) -> None:
    out = tmp_path
    save_simulated(out, simulate(d2_spec(), MixingSpec(), n_train=5, n_val=5))
    (out / "env1_val.csv").unlink()
    with pytest.raises(ContractError):
        load_dataset(out)
    assert (out / DATASET_SIDECAR).is_file()


@pytest.mark.parametrize("decoder", list(nn.DecoderKind))
def test_checkpoint_round_trip(tmp_path: Path, rng: np.random.Generator, decoder: nn.DecoderKind) -> None:
    model = nn.build_model(nn.Architecture(d_z=5, p_hat=2, q_hat=2, decoder=decoder, hidden=7), seed=2)
    model.fit_standardization(rng.standard_normal((40, 5)))
    model.fit_code_standardization(rng.standard_normal((40, 5)))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.arch == model.arch
    for name, value in model.params.items():
        np.testing.assert_array_equal(loaded.params[name], value)
    z = rng.standard_normal((6, 5))
    for a, b in zip(nn.encode(model, z), nn.encode(loaded, z)):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(loaded.code_scale, model.code_scale)
    assert not np.all(model.code_scale == 1.0)


def test_checkpoint_errors(tmp_path: Path) -> None:
    path = tmp_path / "model.ckpt"
    with pytest.raises(ContractError):
        load_checkpoint(path)
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ContractError):
        load_checkpoint(path)

    model = nn.build_model(nn.Architecture(d_z=4, p_hat=1, q_hat=1, hidden=5), seed=0)
    model.params["decoder.0.weight"] = np.zeros((2, 2))
    save_checkpoint(model, path)
    with pytest.raises(ShapeError):
        load_checkpoint(path)

    good = nn.build_model(nn.Architecture(d_z=4, p_hat=1, q_hat=1, hidden=5), seed=0)
    save_checkpoint(good, path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_manifest_outputs(tmp_path: Path) -> None:
    out = tmp_path
    with pytest.raises(ContractError):
        read_manifest_outputs(out)
    (out / "a.csv").write_text("x\n1\n")
    hashes = hash_files(out, ["a.csv"])
    assert hashes["a.csv"] == calculate_sha256(out / "a.csv")[0]
    manifest = RunManifest(command="simulate", output_dir=str(out), version="0", duration_seconds=0.0, outputs=hashes)
    write_manifest(manifest, out)
    assert read_manifest_outputs(out) == hashes
    reordered = {"b.csv": "0", **hashes}
    assert combined_hash(reordered) == combined_hash(dict(reversed(list(reordered.items()))))
