"""Defines the CLI for estimating the causal effect with the comparison methods."""

import logging
from pathlib import Path

import click
from tabulate import tabulate

from inviv.pipeline.estimation import default_methods, estimate_methods, outcomes_frame, parse_methods, theta_or_none
from inviv.simgen import Split, pool
from inviv.storage import load_checkpoint, load_dataset, read_table, write_table
from inviv.utils.cli import Produced, exit_codes, run_with_manifest

logger = logging.getLogger(__name__)


@click.command("estimate")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), required=True, help="Dataset directory.")
@click.option("--model", "model_path", type=click.Path(path_type=Path), default=None, help="Trained checkpoint.")
@click.option("--methods", type=str, default=None, help="Comma-separated method names; defaults to all applicable.")
@click.option("--split", type=click.Choice([s.value for s in Split]), default="train", show_default=True)
@click.option("--no-partial-z", is_flag=True, help="Leave Z unadjusted in the PO(K) methods.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--check", is_flag=True, help="Re-run and compare against the manifest next to --out.")
@exit_codes
def cli(
    data_dir: Path,
    model_path: Path | None,
    methods: str | None,
    split: str,
    no_partial_z: bool,
    out_path: Path,
    check: bool,
) -> None:
    """Writes one row per method and exposure coordinate, pooling all environments of the split."""
    stored = load_dataset(data_dir)
    datasets = stored.train if Split(split) == Split.TRAIN else stored.val
    data = pool(datasets)
    model = None if model_path is None else load_checkpoint(model_path)
    names = parse_methods(methods) if methods else default_methods(model is not None, data.has_oracle, len(datasets))
    theta = theta_or_none(stored.sidecar.theta)

    def produce(target: Path) -> Produced:
        outcomes = estimate_methods(data, names, theta_true=theta, model=model, partial_z=not no_partial_z)
        frame = outcomes_frame(outcomes, num_coords=data.d.shape[1])
        write_table(frame, target / out_path.name)
        return Produced(files=[out_path.name])

    run_with_manifest(
        "estimate",
        out_path.parent,
        produce,
        check=check,
        config={
            "data": str(data_dir),
            "model": None if model_path is None else str(model_path),
            "methods": names,
            "split": split,
            "partial_z": not no_partial_z,
        },
    )
    if not check:
        frame = read_table(out_path)
        columns = ["label", "coord", "theta_hat", "se", "bias", "status"]
        click.echo(tabulate(frame[columns].values.tolist(), headers=columns, tablefmt="simple", floatfmt=".4f"))
