"""Defines the CLI for running the named bias experiments."""

import hashlib
import json
import logging
from pathlib import Path

import click
from tabulate import tabulate

from inviv import conf
from inviv.conf import Settings
from inviv.pipeline.experiments import ExperimentName, ExperimentScale, run_experiment, summarize
from inviv.schemas import ExperimentManifest
from inviv.storage import read_table, write_table
from inviv.utils.cli import Produced, exit_codes, run_with_manifest

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"


@click.command("experiment")
@click.option("--name", required=True, help=f"One of {', '.join(e.value for e in ExperimentName)}.")
@click.option("--seeds", "num_seeds", type=int, default=None, help="Number of seeds; defaults to the settings.")
@click.option("--seed", type=int, default=None, help="First seed; INVIV_SEED takes precedence.")
@click.option("--full-scale", is_flag=True, help="Use the full-scale sample sizes and epochs.")
@click.option("--jobs", type=int, default=None, help="Worker processes; defaults to the settings.")
@click.option("--epochs", type=int, default=None, help="Overrides the number of epochs.")
@click.option("--n-train", type=int, default=None, help="Overrides the training rows per environment.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--check", is_flag=True, help="Re-run and compare against the manifest in --out.")
@exit_codes
def cli(
    name: str,
    num_seeds: int | None,
    seed: int | None,
    full_scale: bool,
    jobs: int | None,
    epochs: int | None,
    n_train: int | None,
    out_dir: Path | None,
    check: bool,
) -> None:
    """Runs every seed and setting of an experiment and summarizes the bias per method."""
    experiment = ExperimentName.parse(name)
    settings = Settings.load().experiments
    scale = ExperimentScale.full() if full_scale else ExperimentScale.desk()
    if epochs is not None:
        scale.epochs = epochs
    if n_train is not None:
        scale.n_train = n_train
    count = num_seeds if num_seeds is not None else (settings.full if full_scale else settings.desk).seeds
    first = conf.resolve_seed(seed)
    seeds = list(range(first, first + count))
    out_dir = out_dir or Path(settings.runs_dir) / experiment.value
    config = {"experiment": experiment.value, "scale": conf.to_container(scale), "seeds": seeds}
    input_hash = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()

    def produce(target: Path) -> Produced:
        result = run_experiment(experiment, seeds, scale, jobs=jobs or settings.jobs)
        write_table(result.results, target / RESULTS_FILE)
        write_table(summarize(result.results), target / SUMMARY_FILE)
        return Produced(
            files=[RESULTS_FILE, SUMMARY_FILE],
            extra={
                "experiment": experiment.value,
                "input_hash": input_hash,
                "failed_tasks": result.failed_tasks,
                "total_tasks": result.total_tasks,
            },
        )

    run_with_manifest(
        "experiment",
        out_dir,
        produce,
        check=check,
        config=config,
        seeds=seeds,
        manifest_cls=ExperimentManifest,
    )
    if not check:
        summary = read_table(out_dir / SUMMARY_FILE)
        columns = ["mixing", "p_hat", "regime", "method", "coord", "mean", "sd", "median", "count"]
        click.echo(tabulate(summary[columns].values.tolist(), headers=columns, tablefmt="simple", floatfmt=".4f"))
        click.echo(f"Wrote results to {click.style(str(out_dir), fg='green')}")
