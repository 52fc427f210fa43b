"""Defines the top-level inviv CLI."""

import click
import colorlogging

from inviv.commands.estimate import cli as estimate_cli
from inviv.commands.experiment import cli as experiment_cli
from inviv.commands.simulate import cli as simulate_cli
from inviv.commands.train import cli as train_cli
from inviv.utils.cli import recursive_help


@click.group(invoke_without_command=True)
@click.pass_context
def cli(ctx: click.Context) -> None:
    """Simulate multi-environment data, learn invariant instruments and estimate causal effects."""
    colorlogging.configure()
    if ctx.invoked_subcommand is None:
        click.echo(recursive_help(cli))


cli.add_command(simulate_cli, "simulate")
cli.add_command(train_cli, "train")
cli.add_command(estimate_cli, "estimate")
cli.add_command(experiment_cli, "experiment")

if __name__ == "__main__":
    # python -m inviv.cli
    cli()
