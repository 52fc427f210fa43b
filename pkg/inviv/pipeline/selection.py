"""Defines the hyperparameter grid search over the loss weights."""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import pandas as pd

from inviv.errors import ConfigurationError, ExperimentError, NumericalError
from inviv.nn import AutoencoderModel
from inviv.pipeline.training import TrainConfig, TrainResult, train
from inviv.simgen import EnvDataset

logger = logging.getLogger(__name__)

DEFAULT_REFERENCE_LAMBDAS = (10.0, 10.0)


class IndependenceSubset(str, enum.Enum):
    ANY = "any"
    WITH = "with"
    WITHOUT = "without"

    def admits(self, lambda2: float) -> bool:
        match self:
            case IndependenceSubset.WITH:
                return lambda2 > 0
            case IndependenceSubset.WITHOUT:
                return lambda2 == 0
        return True


class SelectionMode(str, enum.Enum):
    # Score every candidate with its own weights, or with one fixed pair of weights.
    OWN = "own"
    REFERENCE = "reference"


@dataclass
class GridRun:
    lambda1: float
    lambda2: float
    score: float = math.nan
    result: TrainResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


@dataclass
class CrossValidationResult:
    best: TrainConfig
    best_run: GridRun
    runs: list[GridRun] = field(default_factory=list)

    @property
    def best_model(self) -> AutoencoderModel:
        assert self.best_run.result is not None
        return self.best_run.result.model

    def runs_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "lambda1": run.lambda1,
                    "lambda2": run.lambda2,
                    "score": run.score,
                    "status": "ok" if run.ok else run.error,
                    "selected": run is self.best_run,
                }
                for run in self.runs
            ]
        )


def _score(
    result: TrainResult,
    mode: SelectionMode,
    reference: tuple[float, float],
) -> float:
    terms = result.final.val if result.final.val is not None else result.final.train
    if mode == SelectionMode.OWN:
        return terms["total"]
    ref1, ref2 = reference
    return terms["rec"] + ref1 * terms["inv"] + ref2 * terms["ind"] + result.config.delta * terms["logdet"]


def cross_validate(
    train_data: Sequence[EnvDataset],
    val_data: Sequence[EnvDataset] | None,
    base: TrainConfig,
    lambda1_grid: Sequence[float] | None = None,
    lambda2_grid: Sequence[float] | None = None,
    subset: IndependenceSubset = IndependenceSubset.ANY,
    mode: SelectionMode = SelectionMode.OWN,
    reference: tuple[float, float] = DEFAULT_REFERENCE_LAMBDAS,
) -> CrossValidationResult:
    """Trains one model per ``(lambda1, lambda2)`` pair and keeps the one with the lowest validation loss.

    With ``SelectionMode.OWN`` the score is the final validation total under the candidate's own
    weights; losses under different weights are not on a common scale, so ``SelectionMode.REFERENCE``
    rescores every candidate with the fixed ``reference`` weights instead. Ties go to the earlier
    grid entry.

    Args:
        train_data: One training dataset per environment.
        val_data: Validation datasets; when missing, the final training loss is used.
        base: Configuration shared by all candidates.
        lambda1_grid: Invariance weights, defaults to ``base.lambda1_grid``.
        lambda2_grid: Independence weights, defaults to ``base.lambda2_grid``.
        subset: Restricts the search to ``lambda2 > 0`` or ``lambda2 == 0``.
        mode: How candidates are scored.
        reference: The ``(lambda1, lambda2)`` used by ``SelectionMode.REFERENCE``.

    Returns:
        The selected configuration, its run and every run of the grid.

    Raises:
        ConfigurationError: If the (restricted) grid is empty.
        ExperimentError: If every candidate failed numerically.
    """
    grid1 = list(base.lambda1_grid if lambda1_grid is None else lambda1_grid)
    grid2 = [lam for lam in (base.lambda2_grid if lambda2_grid is None else lambda2_grid) if subset.admits(lam)]
    if not grid1 or not grid2:
        raise ConfigurationError(f"The lambda grid is empty (lambda1 {grid1}, lambda2 {grid2}, subset {subset.value})")

    runs: list[GridRun] = []
    for lambda1 in grid1:
        for lambda2 in grid2:
            run = GridRun(lambda1=float(lambda1), lambda2=float(lambda2))
            config = base.with_lambdas(run.lambda1, run.lambda2)
            try:
                run.result = train(train_data, config, val_data)
                run.score = _score(run.result, SelectionMode(mode), reference)
            except NumericalError as e:
                run.error = type(e).__name__
                logger.warning("Grid point lambda1=%g lambda2=%g failed: %s", lambda1, lambda2, e)
            else:
                logger.info("Grid point lambda1=%g lambda2=%g: score %.6f", lambda1, lambda2, run.score)
            runs.append(run)

    finished = [run for run in runs if run.ok and math.isfinite(run.score)]
    if not finished:
        raise ExperimentError(f"All {len(runs)} grid points failed")
    best_run = finished[0]
    for run in finished[1:]:
        if run.score < best_run.score:
            best_run = run
    assert best_run.result is not None
    logger.info("Selected lambda1=%g lambda2=%g", best_run.lambda1, best_run.lambda2)
    return CrossValidationResult(best=best_run.result.config, best_run=best_run, runs=runs)
