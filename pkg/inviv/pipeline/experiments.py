"""Defines the named bias experiments and their seed fan-out.

Each experiment expands into tasks, one per seed and setting. A task simulates data, selects the loss
weights on the validation split, scores the selected model against the true latents and estimates the
effect with every comparison method on the pooled training split.
"""

import enum
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from inviv.conf import ScaleSettings, Settings
from inviv.errors import ConfigurationError, ExperimentError, InvivError
from inviv.losses import InvarianceKind
from inviv.pipeline.diagnostics import identifiability_report
from inviv.pipeline.estimation import EXPERIMENT_METHODS, estimate_methods, outcomes_frame
from inviv.pipeline.selection import IndependenceSubset, cross_validate
from inviv.pipeline.training import TrainConfig
from inviv.simgen import MixingKind, MixingSpec, ScmSpec, d2_spec, pool, simulate, three_env_spec

logger = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.25

RESULT_COLUMNS = [
    "experiment",
    "seed",
    "mixing",
    "p_hat",
    "q_hat",
    "invariance",
    "lambda1",
    "lambda2",
    "method",
    "coord",
    "theta_hat",
    "bias",
    "se",
    "r2_w_min",
    "min_sv_firststage",
    "status",
]

SUMMARY_KEYS = ["experiment", "mixing", "p_hat", "invariance", "regime", "method", "coord"]


class ExperimentName(str, enum.Enum):
    MIXING_ABLATION = "mixing_ablation"
    MISSPEC_DIMS = "misspec_dims"
    INDEPENDENCE_ABLATION = "independence_ablation"
    THREE_ENV = "three_env"
    INVARIANCE_LOSS_ABLATION = "invariance_loss_ablation"

    @classmethod
    def parse(cls, name: str) -> "ExperimentName":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(e.value for e in cls)
            raise ConfigurationError(f"Unknown experiment {name!r}; choose from {valid}") from None


@dataclass
class ExperimentScale:
    n_train: int = 4_000
    n_val: int = 1_000
    epochs: int = 100
    batch_size: int = 500
    lr: float = 3e-3
    lambda1_grid: list[float] = field(default_factory=lambda: [1.0, 5.0, 10.0])
    lambda2_grid: list[float] = field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0])
    mixing_seed: int = 0

    @classmethod
    def from_settings(cls, settings: ScaleSettings) -> "ExperimentScale":
        return cls(
            n_train=settings.n_train,
            n_val=settings.n_val,
            epochs=settings.epochs,
            batch_size=settings.batch_size,
            lr=settings.lr,
        )

    @classmethod
    def desk(cls) -> "ExperimentScale":
        return cls.from_settings(Settings.load().experiments.desk)

    @classmethod
    def full(cls) -> "ExperimentScale":
        return cls.from_settings(Settings.load().experiments.full)


@dataclass(frozen=True)
class ExperimentTask:
    experiment: ExperimentName
    seed: int
    index: int
    mixing: MixingSpec
    three_env: bool = False
    p_hat: int = 2
    q_hat: int = 2
    invariance: InvarianceKind = InvarianceKind.MMD_POLY2
    subset: IndependenceSubset = IndependenceSubset.WITH

    @property
    def train_seed(self) -> int:
        """Counter-based split of the experiment seed, identical in serial and parallel runs."""
        return int(np.random.SeedSequence([self.seed, self.index]).generate_state(1)[0])

    def scm(self) -> ScmSpec:
        return three_env_spec() if self.three_env else d2_spec()


def _poly(degree: int, mixing_seed: int) -> MixingSpec:
    return MixingSpec(kind=MixingKind.INJECTIVE_POLYNOMIAL, degree=degree, seed=mixing_seed)


def _mixings(mixing_seed: int) -> list[MixingSpec]:
    return [_poly(k, mixing_seed) for k in (1, 2, 3)] + [MixingSpec(kind=MixingKind.INVERTIBLE_MLP, seed=mixing_seed)]


def _settings(name: ExperimentName, mixing_seed: int) -> list[dict]:
    match name:
        case ExperimentName.MIXING_ABLATION:
            return [{"mixing": m} for m in _mixings(mixing_seed)]
        case ExperimentName.MISSPEC_DIMS:
            return [{"mixing": _poly(3, mixing_seed), "p_hat": p_hat} for p_hat in (1, 2, 3, 4)]
        case ExperimentName.INDEPENDENCE_ABLATION:
            mixings = [_poly(2, mixing_seed), MixingSpec(kind=MixingKind.INVERTIBLE_MLP, seed=mixing_seed)]
            return [
                {"mixing": m, "subset": subset}
                for m in mixings
                for subset in (IndependenceSubset.WITHOUT, IndependenceSubset.WITH)
            ]
        case ExperimentName.THREE_ENV:
            return [{"mixing": m, "three_env": True} for m in _mixings(mixing_seed)]
        case ExperimentName.INVARIANCE_LOSS_ABLATION:
            return [{"mixing": _poly(3, mixing_seed), "invariance": kind} for kind in InvarianceKind]
    raise ConfigurationError(f"Unknown experiment {name}")


def experiment_tasks(name: ExperimentName, seeds: Sequence[int], mixing_seed: int = 0) -> list[ExperimentTask]:
    settings = _settings(ExperimentName(name), mixing_seed)
    return [
        ExperimentTask(experiment=ExperimentName(name), seed=seed, index=index, **setting)
        for seed in seeds
        for index, setting in enumerate(settings)
    ]


def run_task(task: ExperimentTask, scale: ExperimentScale) -> pd.DataFrame:
    """Runs one seed of one setting and returns its result rows."""
    spec = task.scm()
    data = simulate(spec, task.mixing, n_train=scale.n_train, n_val=scale.n_val, seed=task.seed)
    base = TrainConfig(
        p_hat=task.p_hat,
        q_hat=task.q_hat,
        epochs=scale.epochs,
        batch_size=scale.batch_size,
        lr=scale.lr,
        invariance=task.invariance,
        seed=task.train_seed,
        lambda1_grid=list(scale.lambda1_grid),
        lambda2_grid=list(scale.lambda2_grid),
    ).for_mixing(task.mixing)
    cv = cross_validate(data.train, data.val, base, subset=task.subset)
    model = cv.best_model

    r2_w_min = float("nan")
    try:
        r2_w_min = min(identifiability_report(model, data.val, lambda2=cv.best.lambda2).r2_w)
    except InvivError as e:
        logger.warning("Identifiability diagnostics failed for %s seed %d: %s", task.experiment.value, task.seed, e)

    theta = spec.theta_vector()
    outcomes = estimate_methods(pool(data.train), EXPERIMENT_METHODS, theta_true=theta, model=model)
    frame = outcomes_frame(outcomes, num_coords=theta.shape[0])
    frame = frame.assign(
        experiment=task.experiment.value,
        seed=task.seed,
        mixing=task.mixing.label,
        p_hat=task.p_hat,
        q_hat=task.q_hat,
        invariance=InvarianceKind(task.invariance).value,
        lambda1=cv.best.lambda1,
        lambda2=cv.best.lambda2,
        r2_w_min=r2_w_min,
    )
    return frame[RESULT_COLUMNS]


def _run_task_safe(args: tuple[ExperimentTask, ExperimentScale]) -> pd.DataFrame | str:
    task, scale = args
    start = time.time()
    logger.info("Starting %s seed %d setting %d (%s)", task.experiment.value, task.seed, task.index, task.mixing.label)
    try:
        frame = run_task(task, scale)
    except InvivError as e:
        logger.warning("Task %s seed %d setting %d failed: %s", task.experiment.value, task.seed, task.index, e)
        return type(e).__name__
    elapsed = time.time() - start
    logger.info("Finished %s seed %d setting %d in %.1fs", task.experiment.value, task.seed, task.index, elapsed)
    return frame


@dataclass
class ExperimentResult:
    name: ExperimentName
    results: pd.DataFrame
    failed_tasks: int
    total_tasks: int


def run_experiment(
    name: ExperimentName | str,
    seeds: Sequence[int],
    scale: ExperimentScale | None = None,
    jobs: int = 1,
) -> ExperimentResult:
    """Runs every task of an experiment, in parallel when ``jobs > 1``.

    Rows are emitted in task order and stably sorted by seed, so the table does not depend on ``jobs``.

    Raises:
        ConfigurationError: If the experiment name is unknown or no seeds are given.
        ExperimentError: If more than a quarter of the tasks failed.
    """
    name = ExperimentName.parse(name) if isinstance(name, str) else name
    if not seeds:
        raise ConfigurationError("At least one seed is required")
    scale = scale or ExperimentScale.desk()
    tasks = experiment_tasks(name, seeds, scale.mixing_seed)
    args = [(task, scale) for task in tasks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool_executor:
            outputs = list(pool_executor.map(_run_task_safe, args))
    else:
        outputs = [_run_task_safe(a) for a in args]

    frames = [out for out in outputs if isinstance(out, pd.DataFrame)]
    failed = len(outputs) - len(frames)
    if failed > MAX_FAILED_FRACTION * len(tasks):
        raise ExperimentError(f"{failed} of {len(tasks)} tasks of {name.value} failed")
    if failed:
        logger.warning("%d of %d tasks of %s failed", failed, len(tasks), name.value)
    results = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=RESULT_COLUMNS)
    results = results.sort_values("seed", kind="mergesort", ignore_index=True)
    return ExperimentResult(name=name, results=results, failed_tasks=failed, total_tasks=len(tasks))


def _regime(row: pd.Series) -> str:
    if row["experiment"] != ExperimentName.INDEPENDENCE_ABLATION.value:
        return "any"
    return "with" if row["lambda2"] > 0 else "without"


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Bias statistics per experiment, mixing, p̂, invariance loss, λ2 regime, method and coordinate."""
    ok = results[results["status"] == "ok"].copy()
    if ok.empty:
        return pd.DataFrame(columns=[*SUMMARY_KEYS, "mean", "sd", "q25", "median", "q75", "mean_abs", "count"])
    ok["regime"] = ok.apply(_regime, axis=1)
    ok["abs_bias"] = ok["bias"].abs()
    grouped = ok.groupby(SUMMARY_KEYS, sort=True)
    summary = grouped["bias"].agg(
        mean="mean",
        sd="std",
        q25=lambda b: b.quantile(0.25),
        median="median",
        q75=lambda b: b.quantile(0.75),
        count="count",
    )
    summary.insert(5, "mean_abs", grouped["abs_bias"].mean())
    return summary.reset_index()
