"""Defines the CLI for simulating multi-environment datasets."""

import logging
from pathlib import Path

import click
import yaml
from omegaconf import DictConfig, OmegaConf

from inviv import conf
from inviv.errors import ConfigurationError
from inviv.simgen import CounterexampleSpec, MixingSpec, ScmSpec, make_counterexample, simulate
from inviv.storage import DATASET_SIDECAR, save_datasets, save_simulated
from inviv.utils.cli import Produced, exit_codes, run_with_manifest

logger = logging.getLogger(__name__)


def _is_counterexample(source: str) -> bool:
    try:
        raw = OmegaConf.load(conf.resolve_config_path(source))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Could not parse {source}: {e}") from e
    return isinstance(raw, DictConfig) and "counterexample" in raw


@click.command("simulate")
@click.option("--spec", "spec_source", default="builtin:d2", show_default=True, help="Spec YAML or builtin alias.")
@click.option("--mixing", "mixing_source", default="builtin:poly1", show_default=True)
@click.option("--seed", type=int, default=None, help="Data seed; INVIV_SEED takes precedence.")
@click.option("--n-train", type=int, default=10_000, show_default=True, help="Training rows per environment.")
@click.option("--n-val", type=int, default=2_000, show_default=True, help="Validation rows per environment.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--check", is_flag=True, help="Re-run and compare against the manifest in --out.")
@exit_codes
def cli(
    spec_source: str,
    mixing_source: str,
    seed: int | None,
    n_train: int,
    n_val: int,
    out_dir: Path,
    check: bool,
) -> None:
    """Samples the train and validation splits of every environment."""
    seed = conf.resolve_seed(seed)

    if _is_counterexample(spec_source):
        ce_spec = conf.load_structured(CounterexampleSpec, spec_source)
        logger.info("%s is a counterexample; ignoring --mixing and --n-val", spec_source)
        config = {"spec": conf.to_container(ce_spec), "n_train": n_train}

        def produce(target: Path) -> Produced:
            ce = make_counterexample(
                ce_spec.counterexample,
                n=n_train,
                seed=seed,
                theta=ce_spec.theta,
                variances=ce_spec.variances,
            )
            sidecar = save_datasets(
                target,
                [ce.dataset],
                [],
                spec=conf.to_container(ce_spec),
                theta=ce.theta,
                seed=seed,
                counterexample=ce.name.value,
            )
            return Produced(files=[DATASET_SIDECAR, *(f.path for f in sidecar.files)])

    else:
        spec = conf.load_structured(ScmSpec, spec_source)
        mixing = conf.load_structured(MixingSpec, mixing_source)
        config = {
            "spec": conf.to_container(spec),
            "mixing": conf.to_container(mixing),
            "n_train": n_train,
            "n_val": n_val,
        }

        def produce(target: Path) -> Produced:
            sidecar = save_simulated(target, simulate(spec, mixing, n_train=n_train, n_val=n_val, seed=seed))
            return Produced(files=[DATASET_SIDECAR, *(f.path for f in sidecar.files)])

    produced = run_with_manifest(
        "simulate",
        out_dir,
        produce,
        check=check,
        config_path=spec_source,
        config=config,
        seeds=[seed],
    )
    if not check:
        click.echo(f"Wrote {len(produced.files) - 1} dataset files to {click.style(str(out_dir), fg='green')}")
