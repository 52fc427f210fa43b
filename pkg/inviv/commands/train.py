"""Defines the CLI for training the invariant autoencoder on a stored dataset."""

import logging
from pathlib import Path

import click
from tabulate import tabulate

from inviv import conf
from inviv.pipeline.diagnostics import identifiability_report
from inviv.pipeline.selection import IndependenceSubset, SelectionMode, cross_validate
from inviv.pipeline.training import TERM_NAMES, TrainConfig, TrainResult, train
from inviv.storage import load_dataset, read_table, save_checkpoint, write_table
from inviv.utils.cli import Produced, exit_codes, run_with_manifest

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.ckpt"
LOSSES_FILE = "losses.csv"
GRID_FILE = "grid.csv"
IDENTIFIABILITY_FILE = "identifiability.json"


@click.command("train")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), required=True, help="Dataset directory.")
@click.option("--config", "config_source", default="builtin:d2_default", show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--grid", is_flag=True, help="Select lambda1 and lambda2 over the configured grid.")
@click.option("--subset", type=click.Choice([s.value for s in IndependenceSubset]), default="any", show_default=True)
@click.option("--selection", type=click.Choice([m.value for m in SelectionMode]), default="own", show_default=True)
@click.option("--epochs", type=int, default=None, help="Overrides the configured number of epochs.")
@click.option("--seed", type=int, default=None, help="Training seed; INVIV_SEED takes precedence.")
@click.option("--check", is_flag=True, help="Re-run and compare against the manifest in --out.")
@exit_codes
def cli(
    data_dir: Path,
    config_source: str,
    out_dir: Path,
    grid: bool,
    subset: str,
    selection: str,
    epochs: int | None,
    seed: int | None,
    check: bool,
) -> None:
    """Trains a model, optionally selecting the loss weights on the validation split."""
    stored = load_dataset(data_dir)
    config = conf.load_structured(TrainConfig, config_source, overrides={"epochs": epochs})
    config.seed = conf.resolve_seed(seed, default=config.seed)
    config.validate()
    val = list(stored.val) or None

    def produce(target: Path) -> Produced:
        files = [CHECKPOINT_FILE, LOSSES_FILE]
        if grid:
            cv = cross_validate(
                stored.train,
                val,
                config,
                subset=IndependenceSubset(subset),
                mode=SelectionMode(selection),
            )
            assert cv.best_run.result is not None
            result: TrainResult = cv.best_run.result
            write_table(cv.runs_frame(), target / GRID_FILE)
            files.append(GRID_FILE)
        else:
            result = train(stored.train, config, val)
        save_checkpoint(result.model, target / CHECKPOINT_FILE)
        write_table(result.history_frame(), target / LOSSES_FILE)
        scored = val or list(stored.train)
        if all(ds.has_oracle for ds in scored):
            report = identifiability_report(result.model, scored, lambda2=result.config.lambda2)
            (target / IDENTIFIABILITY_FILE).write_text(report.model_dump_json(indent=2))
            files.append(IDENTIFIABILITY_FILE)
        return Produced(files=files)

    produced = run_with_manifest(
        "train",
        out_dir,
        produce,
        check=check,
        config_path=config_source,
        config={**conf.to_container(config), "data": str(data_dir), "grid": grid, "subset": subset},
        seeds=[config.seed],
    )
    if not check:
        losses = final_losses(out_dir)
        click.echo(tabulate([[k, losses[k]] for k in TERM_NAMES], headers=["Term", "Final"], tablefmt="simple"))
        click.echo(f"Wrote {', '.join(produced.files)} to {click.style(str(out_dir), fg='green')}")


def final_losses(out_dir: Path) -> dict[str, float]:
    final = read_table(out_dir / LOSSES_FILE).iloc[-1]
    return {k: float(final[f"train_{k}"]) for k in TERM_NAMES}
