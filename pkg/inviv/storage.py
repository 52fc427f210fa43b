"""Defines the on-disk formats for datasets, checkpoints, tables and run manifests.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic ``INVIVCKP``
    8 bytes   u64 length of the JSON header
    N bytes   UTF-8 JSON ``CheckpointMeta``; ``tensors`` lists name and shape in storage order
    ...       raw float64 tensors, row-major, in header order
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from inviv import conf
from inviv.errors import ContractError, ShapeError
from inviv.nn import Architecture, AutoencoderModel, DecoderKind, init_params
from inviv.numerics import Matrix
from inviv.schemas import CheckpointMeta, DatasetFile, DatasetSidecar, RunManifest, TensorEntry
from inviv.simgen import EnvDataset, SimulatedData, Split

logger = logging.getLogger(__name__)

DATASET_SIDECAR = "dataset.json"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_MAGIC = b"INVIVCKP"
FLOAT_FORMAT = "%.17g"

INPUT_MEAN_TENSOR = "buffers.input_mean"
INPUT_SCALE_TENSOR = "buffers.input_scale"
CODE_MEAN_TENSOR = "buffers.code_mean"
CODE_SCALE_TENSOR = "buffers.code_scale"

BLOCK_PREFIXES = (("z", "z_"), ("d", "d_"), ("w", "w_"), ("v", "v_"), ("h", "h_"))


@dataclass(frozen=True)
class StoredDataset:
    sidecar: DatasetSidecar
    train: tuple[EnvDataset, ...]
    val: tuple[EnvDataset, ...]

    @property
    def theta(self) -> Matrix:
        return np.asarray(self.sidecar.theta, dtype=np.float64).reshape(-1, 1)

    @property
    def num_envs(self) -> int:
        return len(self.train)


def dataset_columns(ds: EnvDataset) -> list[str]:
    columns = [f"z_{i}" for i in range(ds.d_z)] + [f"d_{i}" for i in range(ds.d.shape[1])] + ["y"]
    if ds.has_oracle:
        for name in ("w", "v", "h"):
            columns += [f"{name}_{i}" for i in range(getattr(ds, name).shape[1])]
    return columns


def _frame(ds: EnvDataset) -> pd.DataFrame:
    blocks = [ds.z, ds.d, ds.y]
    if ds.has_oracle:
        blocks += [ds.w, ds.v, ds.h]
    return pd.DataFrame(np.hstack(blocks), columns=dataset_columns(ds))


def write_table(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _dataset_file_name(env: int, split: Split) -> str:
    return f"env{env}_{Split(split).value}.csv"


def save_datasets(
    out_dir: Path,
    train: Sequence[EnvDataset],
    val: Sequence[EnvDataset],
    spec: dict,
    theta: Matrix,
    seed: int,
    mixing: dict | None = None,
    counterexample: str | None = None,
) -> DatasetSidecar:
    """Writes one CSV per environment and split plus the ``dataset.json`` sidecar."""
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for ds in [*train, *val]:
        name = _dataset_file_name(ds.env, ds.split)
        write_table(_frame(ds), out_dir / name)
        files.append(DatasetFile(env=ds.env, split=Split(ds.split).value, path=name, rows=ds.n))
    sidecar = DatasetSidecar(
        spec=spec,
        mixing=mixing,
        counterexample=counterexample,
        theta=np.asarray(theta, dtype=np.float64).reshape(-1).tolist(),
        seed=seed,
        columns=dataset_columns(train[0]),
        files=files,
    )
    (out_dir / DATASET_SIDECAR).write_text(sidecar.model_dump_json(indent=2))
    logger.info("Wrote %d dataset files to %s", len(files), out_dir)
    return sidecar


def save_simulated(out_dir: Path, data: SimulatedData) -> DatasetSidecar:
    return save_datasets(
        out_dir,
        data.train,
        data.val,
        spec=conf.to_container(data.spec),
        theta=data.spec.theta_vector(),
        seed=data.seed,
        mixing=conf.to_container(data.mixing),
    )


def _block(df: pd.DataFrame, prefix: str) -> Matrix | None:
    columns = [c for c in df.columns if c.startswith(prefix) and c[len(prefix) :].isdigit()]
    if not columns:
        return None
    columns.sort(key=lambda c: int(c[len(prefix) :]))
    return df[columns].to_numpy(dtype=np.float64)


def load_dataset(data_dir: Path) -> StoredDataset:
    """Reads a dataset directory written by ``save_datasets``.

    Raises:
        ContractError: If the directory, the sidecar or a listed file is missing or malformed.
    """
    sidecar_path = data_dir / DATASET_SIDECAR
    if not sidecar_path.is_file():
        raise ContractError(f"Not a dataset directory (missing {DATASET_SIDECAR}): {data_dir}")
    sidecar = DatasetSidecar.model_validate_json(sidecar_path.read_text())
    splits: dict[Split, list[EnvDataset]] = {Split.TRAIN: [], Split.VAL: []}
    for entry in sidecar.files:
        path = data_dir / entry.path
        if not path.is_file():
            raise ContractError(f"Dataset file listed in the sidecar is missing: {path}")
        df = read_table(path)
        if len(df) != entry.rows:
            raise ContractError(f"{path} has {len(df)} rows, the sidecar says {entry.rows}")
        blocks = {name: _block(df, prefix) for name, prefix in BLOCK_PREFIXES}
        if blocks["z"] is None or blocks["d"] is None or "y" not in df.columns:
            raise ContractError(f"{path} lacks the z_*, d_* or y columns")
        split = Split(entry.split)
        splits[split].append(
            EnvDataset(
                env=entry.env,
                split=split,
                seed=sidecar.seed,
                z=blocks["z"],
                d=blocks["d"],
                y=df[["y"]].to_numpy(dtype=np.float64),
                w=blocks["w"],
                v=blocks["v"],
                h=blocks["h"],
            )
        )
    return StoredDataset(
        sidecar=sidecar,
        train=tuple(sorted(splits[Split.TRAIN], key=lambda ds: ds.env)),
        val=tuple(sorted(splits[Split.VAL], key=lambda ds: ds.env)),
    )


def _checkpoint_tensors(model: AutoencoderModel) -> list[tuple[str, Matrix]]:
    tensors = [(name, model.params[name]) for name in sorted(model.params)]
    return tensors + [
        (INPUT_MEAN_TENSOR, model.input_mean),
        (INPUT_SCALE_TENSOR, model.input_scale),
        (CODE_MEAN_TENSOR, model.code_mean),
        (CODE_SCALE_TENSOR, model.code_scale),
    ]


def save_checkpoint(model: AutoencoderModel, path: Path) -> None:
    tensors = _checkpoint_tensors(model)
    arch = model.arch
    meta = CheckpointMeta(
        d_z=arch.d_z,
        p_hat=arch.p_hat,
        q_hat=arch.q_hat,
        decoder=DecoderKind(arch.decoder).value,
        degree=arch.degree,
        hidden=arch.hidden,
        tensors=[TensorEntry(name=name, shape=list(value.shape)) for name, value in tensors],
    )
    header = meta.model_dump_json().encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for _, value in tensors:
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path: Path) -> AutoencoderModel:
    """Reads a checkpoint and checks every tensor against the recorded architecture.

    Raises:
        ContractError: If the file is not a checkpoint or is truncated.
        ShapeError: If a tensor does not match the architecture.
    """
    if not path.is_file():
        raise ContractError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ContractError(f"Not a checkpoint file: {path}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    meta = CheckpointMeta.model_validate_json(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    arch = Architecture(
        d_z=meta.d_z,
        p_hat=meta.p_hat,
        q_hat=meta.q_hat,
        decoder=DecoderKind(meta.decoder),
        degree=meta.degree,
        hidden=meta.hidden,
    )
    tensors: dict[str, Matrix] = {}
    for entry in meta.tensors:
        count = int(np.prod(entry.shape))
        if offset + 8 * count > len(raw):
            raise ContractError(f"Checkpoint is truncated at tensor {entry.name}: {path}")
        tensors[entry.name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(entry.shape).copy()
        offset += 8 * count

    expected = {name: value.shape for name, value in init_params(arch, seed=0).items()}
    expected[INPUT_MEAN_TENSOR] = expected[INPUT_SCALE_TENSOR] = (1, arch.d_z)
    expected[CODE_MEAN_TENSOR] = expected[CODE_SCALE_TENSOR] = (1, arch.latent_dim)
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise ShapeError(f"Checkpoint tensor {name} is missing or does not have shape {shape}")
    return AutoencoderModel(
        arch=arch,
        params={name: tensors[name] for name in expected if not name.startswith("buffers.")},
        input_mean=tensors[INPUT_MEAN_TENSOR],
        input_scale=tensors[INPUT_SCALE_TENSOR],
        code_mean=tensors[CODE_MEAN_TENSOR],
        code_scale=tensors[CODE_SCALE_TENSOR],
    )


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = out_dir / MANIFEST_FILE
    path.write_text(manifest.model_dump_json(indent=2))
    return path


def read_manifest_outputs(out_dir: Path) -> dict[str, str]:
    """The ``file -> sha256`` table recorded by the previous run in ``out_dir``."""
    path = out_dir / MANIFEST_FILE
    if not path.is_file():
        raise ContractError(f"No manifest to check against in {out_dir}")
    return dict(json.loads(path.read_text()).get("outputs", {}))
