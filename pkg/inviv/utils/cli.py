"""Defines utilities shared by the CLI commands."""

import logging
import tempfile
import textwrap
import time
from dataclasses import dataclass, field
from functools import wraps
from pathlib import Path
from typing import Any, Callable, ParamSpec, TypeVar

import click

from inviv import __version__
from inviv.errors import (
    ConfigurationError,
    ContractError,
    ExperimentError,
    NumericalError,
    ShapeError,
)
from inviv.schemas import RunManifest
from inviv.storage import read_manifest_outputs, write_manifest
from inviv.utils.checksum import hash_files

logger = logging.getLogger(__name__)

T = TypeVar("T")
P = ParamSpec("P")


def recursive_help(cmd: click.Command, parent: click.Context | None = None, indent: int = 0) -> str:
    ctx = click.core.Context(cmd, info_name=cmd.name, parent=parent)
    help_text = cmd.get_help(ctx)
    commands = getattr(cmd, "commands", {})
    for sub in commands.values():
        help_text += recursive_help(sub, ctx, indent + 2)
    return textwrap.indent(help_text, " " * indent)


def exit_codes(f: Callable[P, T]) -> Callable[P, T]:
    """Maps package errors to click errors: usage-type errors exit 2, numerical and I/O errors exit 1."""

    @wraps(f)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
        try:
            return f(*args, **kwargs)
        except (ConfigurationError, ContractError, ShapeError) as e:
            raise click.UsageError(str(e)) from e
        except (NumericalError, ExperimentError, OSError) as e:
            raise click.ClickException(f"{type(e).__name__}: {e}") from e

    return wrapper


@dataclass
class Produced:
    """Files written by a command, relative to its output directory, plus extra manifest fields."""

    files: list[str]
    extra: dict[str, Any] = field(default_factory=dict)


def run_with_manifest(
    command: str,
    out_dir: Path,
    produce: Callable[[Path], Produced],
    check: bool = False,
    config_path: str | None = None,
    config: dict[str, Any] | None = None,
    seeds: list[int] | None = None,
    manifest_cls: type[RunManifest] = RunManifest,
) -> Produced:
    """Runs ``produce`` and records the output hashes in ``out_dir/manifest.json``.

    With ``check`` the outputs are written to a scratch directory instead and their hashes compared
    against the existing manifest; nothing in ``out_dir`` changes.

    Raises:
        ContractError: If ``check`` is set and ``out_dir`` has no manifest.
        click.ClickException: If a checked output differs from the recorded one.
    """
    start = time.time()
    if check:
        expected = read_manifest_outputs(out_dir)
        with tempfile.TemporaryDirectory() as tmp:
            produced = produce(Path(tmp))
            actual = hash_files(Path(tmp), produced.files)
        mismatched = sorted(name for name in expected.keys() | actual.keys() if expected.get(name) != actual.get(name))
        if mismatched:
            raise click.ClickException(f"Outputs differ from the manifest in {out_dir}: {', '.join(mismatched)}")
        click.echo(click.style(f"Check passed: {len(actual)} outputs match {out_dir}", fg="green"))
        return produced

    out_dir.mkdir(parents=True, exist_ok=True)
    produced = produce(out_dir)
    manifest = manifest_cls(
        command=command,
        config_path=config_path,
        config=config or {},
        seeds=seeds or [],
        output_dir=str(out_dir),
        version=__version__,
        duration_seconds=time.time() - start,
        outputs=hash_files(out_dir, produced.files),
        **produced.extra,
    )
    path = write_manifest(manifest, out_dir)
    logger.info("Wrote %s", path)
    return produced
