"""Defines the training loop of the invariant autoencoder."""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from inviv import autodiff as ad, nn
from inviv.errors import ConfigurationError, ShapeError, TrainingDivergenceError
from inviv.losses import InvarianceKind, KernelSpec, LossWeights, ObjectiveTerms, total_objective
from inviv.numerics import Matrix
from inviv.simgen import EnvDataset, MixingKind, MixingSpec

logger = logging.getLogger(__name__)

MIN_BATCH_SIZE = 4
TERM_NAMES = ("total", "rec", "inv", "ind", "logdet")


@dataclass
class TrainConfig:
    lambda1: float = 10.0
    lambda2: float = 10.0
    delta: float = 0.01
    logdet_eps: float = ad.LOG_DET_EPS
    p_hat: int = 2
    q_hat: int = 2
    decoder: nn.DecoderKind = nn.DecoderKind.POLYNOMIAL
    decoder_degree: int = 1
    hidden: int = nn.DEFAULT_HIDDEN
    batch_size: int = 500
    epochs: int = 400
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    invariance: InvarianceKind = InvarianceKind.MMD_POLY2
    hsic_degree: int = 2
    stop_independence_grad: bool = True
    seed: int = 0
    log_every: int = 10
    lambda1_grid: list[float] = field(default_factory=lambda: [1.0, 5.0, 10.0])
    lambda2_grid: list[float] = field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0])

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "delta"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"TrainConfig.{name} must be non-negative, got {getattr(self, name)}")
        if self.batch_size < MIN_BATCH_SIZE:
            raise ConfigurationError(f"TrainConfig.batch_size must be >= {MIN_BATCH_SIZE}, got {self.batch_size}")
        if self.p_hat < 1 or self.q_hat < 0:
            raise ConfigurationError(f"Need p_hat >= 1 and q_hat >= 0, got {self.p_hat} and {self.q_hat}")
        if self.epochs < 1:
            raise ConfigurationError(f"TrainConfig.epochs must be positive, got {self.epochs}")

    def weights(self) -> LossWeights:
        return LossWeights(lambda1=self.lambda1, lambda2=self.lambda2, delta=self.delta, logdet_eps=self.logdet_eps)

    def kernel(self) -> KernelSpec:
        return KernelSpec(degree=self.hsic_degree)

    def architecture(self, d_z: int) -> nn.Architecture:
        return nn.Architecture(
            d_z=d_z,
            p_hat=self.p_hat,
            q_hat=self.q_hat,
            decoder=nn.DecoderKind(self.decoder),
            degree=self.decoder_degree,
            hidden=self.hidden,
        )

    def with_lambdas(self, lambda1: float, lambda2: float) -> "TrainConfig":
        return dataclasses.replace(self, lambda1=lambda1, lambda2=lambda2)

    def for_mixing(self, mixing: MixingSpec) -> "TrainConfig":
        """Polynomial decoder of the mixing degree for polynomial mixing, MLP decoder otherwise."""
        if mixing.kind == MixingKind.INJECTIVE_POLYNOMIAL:
            return dataclasses.replace(self, decoder=nn.DecoderKind.POLYNOMIAL, decoder_degree=mixing.degree)
        return dataclasses.replace(self, decoder=nn.DecoderKind.MLP)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train: dict[str, float]
    val: dict[str, float] | None = None


@dataclass
class TrainResult:
    model: nn.AutoencoderModel
    config: TrainConfig
    history: list[EpochRecord] = field(default_factory=list)
    steps: int = 0

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]

    def history_frame(self) -> pd.DataFrame:
        rows = []
        for record in self.history:
            row: dict[str, float] = {"epoch": record.epoch}
            row.update({f"train_{k}": record.train[k] for k in TERM_NAMES})
            row.update({f"val_{k}": (record.val or {}).get(k, math.nan) for k in TERM_NAMES})
            rows.append(row)
        return pd.DataFrame(rows)


def _terms_dict(terms: ObjectiveTerms) -> dict[str, float]:
    return {"total": terms.total.item(), "rec": terms.rec, "inv": terms.inv, "ind": terms.ind, "logdet": terms.logdet}


def _check_envs(datasets: Sequence[EnvDataset], config: TrainConfig) -> int:
    if not datasets:
        raise ConfigurationError("Training needs at least one environment")
    if len(datasets) < 2 and config.lambda1 > 0:
        raise ConfigurationError("Training with lambda1 > 0 needs at least two environments")
    widths = {ds.d_z for ds in datasets}
    if len(widths) != 1:
        raise ShapeError(f"Environments disagree on d_z: {sorted(widths)}")
    return widths.pop()


def evaluate(
    model: nn.AutoencoderModel,
    datasets: Sequence[EnvDataset],
    config: TrainConfig,
    weights: LossWeights | None = None,
) -> dict[str, float]:
    """Average objective terms over aligned, unshuffled per-environment chunks of ``batch_size`` rows.

    Every term is evaluated, including those with weight 0; only weighted terms enter ``total``.
    """
    weights = weights or config.weights()
    if len(datasets) < 2:
        weights = dataclasses.replace(weights, lambda1=0.0)
    inputs = [model.standardize(ds.z) for ds in datasets]
    batch = min(config.batch_size, min(x.shape[0] for x in inputs))
    n_chunks = max(1, min(x.shape[0] for x in inputs) // batch)
    sums = dict.fromkeys(TERM_NAMES, 0.0)
    for c in range(n_chunks):
        tape = ad.Tape()
        params = nn.bind(model, tape, trainable=False)
        chunk = [x[c * batch : (c + 1) * batch] for x in inputs]
        terms = total_objective(
            chunk,
            model,
            params,
            weights,
            invariance=config.invariance,
            kernel=config.kernel(),
            evaluate_all=True,
        )
        for key, value in _terms_dict(terms).items():
            sums[key] += value
    return {k: v / n_chunks for k, v in sums.items()}


def train(
    train_data: Sequence[EnvDataset],
    config: TrainConfig,
    val_data: Sequence[EnvDataset] | None = None,
) -> TrainResult:
    """Fits the autoencoder with the weighted objective.

    Each step draws one equal-size minibatch per environment. Minibatches are taken without
    replacement within an epoch and the order is reshuffled every epoch.

    Args:
        train_data: One dataset per environment.
        config: Training configuration.
        val_data: Optional validation datasets, evaluated after every epoch.

    Returns:
        The trained model and per-epoch loss terms.

    Raises:
        ConfigurationError: If the configuration is invalid for the data.
        TrainingDivergenceError: If the loss becomes non-finite; the error carries the step index.
    """
    config.validate()
    d_z = _check_envs(train_data, config)
    model = nn.build_model(config.architecture(d_z), seed=config.seed)
    model.fit_standardization(np.vstack([ds.z for ds in train_data]))
    inputs: list[Matrix] = [model.standardize(ds.z) for ds in train_data]
    min_rows = min(x.shape[0] for x in inputs)
    batch = min(config.batch_size, min_rows)
    if batch < MIN_BATCH_SIZE:
        raise ConfigurationError(f"Every environment needs at least {MIN_BATCH_SIZE} rows, got {min_rows}")
    steps_per_epoch = max(1, min_rows // batch)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    state = nn.AdamState.create(
        model.params, lr=config.lr, weight_decay=config.weight_decay, clip_norm=config.grad_clip
    )
    weights, kernel = config.weights(), config.kernel()
    result = TrainResult(model=model, config=config)

    for epoch in range(1, config.epochs + 1):
        orders = [rng.permutation(x.shape[0]) for x in inputs]
        sums = dict.fromkeys(TERM_NAMES, 0.0)
        for step in range(steps_per_epoch):
            batches = [x[order[step * batch : (step + 1) * batch]] for x, order in zip(inputs, orders)]
            tape = ad.Tape()
            params = nn.bind(model, tape)
            terms = total_objective(
                batches,
                model,
                params,
                weights,
                invariance=config.invariance,
                kernel=kernel,
                stop_independence_grad=config.stop_independence_grad,
            )
            result.steps += 1
            if not math.isfinite(terms.total.item()):
                raise TrainingDivergenceError(result.steps)
            grads = ad.backward(terms.total)
            model.params = nn.adam_step(state, model.params, grads)
            for key, value in _terms_dict(terms).items():
                sums[key] += value
            logger.debug("Step %d: loss %.6f", result.steps, terms.total.item())

        train_terms = {k: v / steps_per_epoch for k, v in sums.items()}
        val_terms = evaluate(model, val_data, config) if val_data else None
        result.history.append(EpochRecord(epoch=epoch, train=train_terms, val=val_terms))
        if epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info(
                "Epoch %d/%d: train %.5f (rec %.5f, inv %.5f, ind %.5f), val %s",
                epoch,
                config.epochs,
                train_terms["total"],
                train_terms["rec"],
                train_terms["inv"],
                train_terms["ind"],
                "n/a" if val_terms is None else f"{val_terms['total']:.5f}",
            )
    model.fit_code_standardization(np.vstack([ds.z for ds in train_data]))
    return result
