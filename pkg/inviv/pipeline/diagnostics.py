"""Defines identifiability diagnostics for learned representations against the true latents."""

import itertools
import logging
from typing import Sequence

import numpy as np

from inviv import autodiff as ad, nn
from inviv.errors import ContractError, ShapeError
from inviv.losses import KernelSpec, loss_hsic, loss_mmd
from inviv.numerics import Matrix, add_intercept, min_singular_value, population_covariance, solve_ols
from inviv.numerics import symmetric_eigenvalues
from inviv.schemas import IdentifiabilityReport
from inviv.simgen import EnvDataset

logger = logging.getLogger(__name__)

DEFAULT_MAX_SAMPLES = 1000
DIAGNOSTIC_KERNEL = KernelSpec(degree=2)


def affine_fit(target: Matrix, regressors: Matrix) -> tuple[Matrix, list[float]]:
    """OLS of every ``target`` column on ``[1, regressors]``.

    Returns:
        The coefficient matrix (intercept row first) and the raw R² of each target column. A constant
        target column has R² 0.
    """
    if target.shape[0] != regressors.shape[0]:
        raise ShapeError(f"Row counts differ: {target.shape[0]} vs {regressors.shape[0]}")
    design = add_intercept(regressors)
    coef = solve_ols(design, target)
    resid = target - design @ coef
    ss_res = np.sum(resid**2, axis=0)
    ss_tot = np.sum((target - target.mean(axis=0)) ** 2, axis=0)
    r2 = [float(1.0 - r / t) if t > 0 else 0.0 for r, t in zip(ss_res, ss_tot)]
    return coef, r2


def _clip(values: list[float]) -> list[float]:
    return [min(1.0, max(0.0, v)) for v in values]


def _mean_pairwise_mmd(blocks: Sequence[Matrix]) -> float:
    if len(blocks) < 2:
        return 0.0
    values = []
    for a, b in itertools.combinations(blocks, 2):
        tape = ad.Tape()
        values.append(loss_mmd(tape.constant(a), b, DIAGNOSTIC_KERNEL).item())
    return float(np.mean(values))


def _mean_hsic(left: Sequence[Matrix], right: Sequence[Matrix]) -> float:
    values = []
    for a, b in zip(left, right):
        tape = ad.Tape()
        values.append(loss_hsic(tape.constant(a), b, DIAGNOSTIC_KERNEL).item())
    return float(np.mean(values))


def identifiability_from_latents(
    w_hat: Sequence[Matrix],
    v_hat: Sequence[Matrix],
    w: Sequence[Matrix],
    v: Sequence[Matrix],
    include_v: bool = True,
    max_samples: int = DEFAULT_MAX_SAMPLES,
) -> IdentifiabilityReport:
    """Scores learned latents against the true ones, one entry per environment in every argument.

    The affine fits pool all environments. Kernel statistics use the first ``max_samples`` rows of each
    environment.
    """
    if not (len(w_hat) == len(v_hat) == len(w) == len(v)) or not w_hat:
        raise ShapeError("Expected the same positive number of environments for every latent block")
    pooled_w_hat, pooled_v_hat = np.vstack(w_hat), np.vstack(v_hat)
    pooled_w, pooled_v = np.vstack(w), np.vstack(v)

    coef, r2_w_raw = affine_fit(pooled_w_hat, pooled_w)
    a = coef[1:].T
    r2_v_raw: list[float] | None = None
    if include_v and pooled_v_hat.shape[1] > 0:
        _, r2_v_raw = affine_fit(pooled_v_hat, pooled_v)

    head = slice(0, max_samples)
    latent_cov = population_covariance(np.hstack([pooled_w_hat, pooled_v_hat]))
    report = IdentifiabilityReport(
        r2_w=_clip(r2_w_raw),
        r2_w_raw=r2_w_raw,
        min_sv_a=min_singular_value(a),
        mmd_w=_mean_pairwise_mmd([x[head] for x in w_hat]),
        hsic_wv=_mean_hsic([x[head] for x in w_hat], [x[head] for x in v_hat]),
        hsic_w_true_v=_mean_hsic([x[head] for x in w_hat], [x[head] for x in v]),
        r2_v=None if r2_v_raw is None else _clip(r2_v_raw),
        r2_v_raw=r2_v_raw,
        latent_min_eigenvalue=float(symmetric_eigenvalues(latent_cov)[0]),
        p_hat=pooled_w_hat.shape[1],
        q_hat=pooled_v_hat.shape[1],
        n=pooled_w_hat.shape[0],
    )
    logger.info("Identifiability: R2(W) %s, min sv(A) %.4f", [round(r, 4) for r in report.r2_w], report.min_sv_a)
    return report


def identifiability_report(
    model: nn.AutoencoderModel,
    datasets: Sequence[EnvDataset],
    lambda2: float | None = None,
    max_samples: int = DEFAULT_MAX_SAMPLES,
) -> IdentifiabilityReport:
    """Encodes every environment and compares the code with the oracle latents.

    The fit of V̂ on V is skipped when ``lambda2`` is 0, since nothing then ties V̂ to V.

    Raises:
        ContractError: If a dataset has no oracle latent columns.
    """
    missing = [ds.env for ds in datasets if not ds.has_oracle]
    if missing:
        raise ContractError(f"Identifiability diagnostics need the oracle W and V; missing in envs {missing}")
    codes = [nn.encode(model, ds.z) for ds in datasets]
    return identifiability_from_latents(
        [w_hat for w_hat, _ in codes],
        [v_hat for _, v_hat in codes],
        [ds.w for ds in datasets if ds.w is not None],
        [ds.v for ds in datasets if ds.v is not None],
        include_v=lambda2 is None or lambda2 > 0,
        max_samples=max_samples,
    )
