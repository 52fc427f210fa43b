"""Defines the JSON models written next to datasets, checkpoints, estimates and runs."""

from typing import Any

from pydantic import BaseModel, ConfigDict, Field

FORMAT_VERSION = 1


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EstimateReport(StrictModel):
    method: str = Field(..., title="Method")
    theta_hat: list[float] = Field(..., title="Theta Hat")
    se: list[float] = Field(..., title="Standard Error")
    bias: list[float] | None = Field(None, title="Bias")
    instrument_dim: int = Field(..., title="Instrument Dim", ge=0)
    min_sv_first_stage: float = Field(..., title="Min Singular Value Of First Stage", ge=0.0)
    n: int = Field(..., title="Sample Size", ge=0)
    first_stage_f: list[float] = Field(default_factory=list, title="First Stage F")
    egger_intercept: float | None = Field(None, title="Egger Intercept")
    notes: list[str] = Field(default_factory=list, title="Notes")


class IdentifiabilityReport(StrictModel):
    r2_w: list[float] = Field(..., title="R2 Of W Hat On W (Clipped)")
    r2_w_raw: list[float] = Field(..., title="R2 Of W Hat On W")
    min_sv_a: float = Field(..., title="Min Singular Value Of Affine Map", ge=0.0)
    mmd_w: float = Field(..., title="Cross Environment MMD Of W Hat")
    hsic_wv: float = Field(..., title="HSIC Of W Hat And V Hat")
    hsic_w_true_v: float = Field(..., title="HSIC Of W Hat And True V")
    r2_v: list[float] | None = Field(None, title="R2 Of V Hat On V (Clipped)")
    r2_v_raw: list[float] | None = Field(None, title="R2 Of V Hat On V")
    latent_min_eigenvalue: float = Field(..., title="Min Eigenvalue Of Latent Covariance")
    p_hat: int = Field(..., title="P Hat")
    q_hat: int = Field(..., title="Q Hat")
    n: int = Field(..., title="Sample Size")


class DatasetFile(StrictModel):
    env: int = Field(..., title="Environment")
    split: str = Field(..., title="Split")
    path: str = Field(..., title="Path")
    rows: int = Field(..., title="Rows")


class DatasetSidecar(StrictModel):
    format_version: int = Field(FORMAT_VERSION, title="Format Version")
    spec: dict[str, Any] = Field(..., title="Structural Model")
    mixing: dict[str, Any] | None = Field(None, title="Mixing")
    counterexample: str | None = Field(None, title="Counterexample")
    theta: list[float] = Field(..., title="True Effect")
    seed: int = Field(..., title="Seed")
    columns: list[str] = Field(..., title="Columns")
    files: list[DatasetFile] = Field(..., title="Files")


class TensorEntry(StrictModel):
    name: str = Field(..., title="Name")
    shape: list[int] = Field(..., title="Shape")


class CheckpointMeta(StrictModel):
    format_version: int = Field(FORMAT_VERSION, title="Format Version")
    d_z: int = Field(..., title="Input Width")
    p_hat: int = Field(..., title="P Hat")
    q_hat: int = Field(..., title="Q Hat")
    decoder: str = Field(..., title="Decoder Kind")
    degree: int = Field(..., title="Decoder Degree")
    hidden: int = Field(..., title="Hidden Width")
    tensors: list[TensorEntry] = Field(default_factory=list, title="Tensors")


class RunManifest(StrictModel):
    command: str = Field(..., title="Command")
    config_path: str | None = Field(None, title="Config Path")
    config: dict[str, Any] = Field(default_factory=dict, title="Resolved Config")
    seeds: list[int] = Field(default_factory=list, title="Seeds")
    output_dir: str = Field(..., title="Output Directory")
    version: str = Field(..., title="Tool Version")
    duration_seconds: float = Field(..., title="Wall Clock Duration")
    outputs: dict[str, str] = Field(default_factory=dict, title="Output SHA256 By File")


class ExperimentManifest(RunManifest):
    experiment: str = Field(..., title="Experiment")
    input_hash: str = Field(..., title="Input Hash")
    failed_tasks: int = Field(0, title="Failed Tasks")
    total_tasks: int = Field(0, title="Total Tasks")
