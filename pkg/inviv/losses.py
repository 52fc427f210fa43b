"""Differentiable training criteria for the invariant autoencoder.

All losses take recorded variables (or plain matrices, lifted to constants on the tape of the
other operand) and return a 1x1 variable.
"""

import enum
import itertools
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from inviv import autodiff as ad
from inviv import nn
from inviv.errors import ConfigurationError, ContractError, NumericalError, ShapeError
from inviv.numerics import Matrix

DEFAULT_DELTA = 0.01


@dataclass(frozen=True)
class KernelSpec:
    kind: Literal["polynomial"] = "polynomial"
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise ConfigurationError(f"Kernel degree must be >= 1, got {self.degree}")


class InvarianceKind(str, enum.Enum):
    MMD_POLY2 = "mmd_poly2"
    MMD_POLY3 = "mmd_poly3"
    MEAN_VAR = "mean_var"


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 10.0
    delta: float = DEFAULT_DELTA
    logdet_eps: float = ad.LOG_DET_EPS


@dataclass(frozen=True)
class ObjectiveTerms:
    total: ad.Var
    rec: float
    inv: float
    ind: float
    logdet: float


def loss_recon(zhat: ad.Var, z: "ad.Var | Matrix") -> ad.Var:
    """Mean squared error over all entries."""
    target_shape = z.shape
    if zhat.shape != target_shape:
        raise ShapeError(f"Reconstruction shape mismatch: {zhat.shape} vs {target_shape}")
    return ad.mean(ad.square(ad.sub(zhat, z)))


def loss_mmd(x: ad.Var, y: "ad.Var | Matrix", kernel: KernelSpec, min_samples: int = 2) -> ad.Var:
    """Biased (V-statistic) squared MMD under ``k(x, y) = (xᵀy + c) ** degree``."""
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"MMD feature width mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < min_samples or y.shape[0] < min_samples:
        raise ContractError(
            f"MMD needs at least {min_samples} samples per side, got {x.shape[0]} and {y.shape[0]}"
        )
    y = y if isinstance(y, ad.Var) else x.tape.constant(y)
    kxx = ad.mean(ad.gram_poly_kernel(x, x, kernel.degree, kernel.offset))
    kyy = ad.mean(ad.gram_poly_kernel(y, y, kernel.degree, kernel.offset))
    kxy = ad.mean(ad.gram_poly_kernel(x, y, kernel.degree, kernel.offset))
    return ad.add(ad.sub(kxx, ad.scalar_mul(kxy, 2.0)), kyy)


def _center_gram(k: ad.Var) -> ad.Var:
    # H K H with H = I - 11ᵀ/m, computed without forming H.
    return ad.add(ad.sub(ad.sub(k, ad.mean(k, axis=0)), ad.mean(k, axis=1)), ad.mean(k))


def loss_hsic(a: ad.Var, b: "ad.Var | Matrix", kernel: KernelSpec, min_samples: int = 4) -> ad.Var:
    """Biased HSIC estimate ``trace(K H L H) / m²``."""
    m = a.shape[0]
    if b.shape[0] != m:
        raise ShapeError(f"HSIC sample count mismatch: {m} vs {b.shape[0]}")
    if m < min_samples:
        raise ContractError(f"HSIC needs at least {min_samples} samples, got {m}")
    k = ad.gram_poly_kernel(a, a, kernel.degree, kernel.offset)
    tape_b = b if isinstance(b, ad.Var) else a.tape.constant(b)
    lgram = ad.gram_poly_kernel(tape_b, tape_b, kernel.degree, kernel.offset)
    return ad.scalar_mul(ad.sum(ad.elementwise_mul(_center_gram(k), lgram)), 1.0 / (m * m))


def _column_variance(x: ad.Var) -> ad.Var:
    return ad.mean(ad.square(ad.sub(x, ad.mean(x, axis=0))), axis=0)


def _l2_norm(x: ad.Var) -> ad.Var:
    return ad.sqrt(ad.sum(ad.square(x)))


def loss_meanvar(x: ad.Var, y: "ad.Var | Matrix") -> ad.Var:
    """``‖mean(x) − mean(y)‖₂ + ‖var(x) − var(y)‖₂`` with per-coordinate population variances."""
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"Mean-Var feature width mismatch: {x.shape} vs {y.shape}")
    vy = y if isinstance(y, ad.Var) else x.tape.constant(y)
    mean_gap = _l2_norm(ad.sub(ad.mean(x, axis=0), ad.mean(vy, axis=0)))
    var_gap = _l2_norm(ad.sub(_column_variance(x), _column_variance(vy)))
    return ad.add(mean_gap, var_gap)


def loss_logdet_penalty(latent: ad.Var, eps: float = ad.LOG_DET_EPS) -> ad.Var:
    """``−log det(Cov(latent) + eps·I)`` with the population covariance."""
    n, width = latent.shape
    if n < width + 1:
        raise ContractError(f"Log-det penalty needs at least {width + 1} samples, got {n}")
    centered = ad.sub(latent, ad.mean(latent, axis=0))
    cov = ad.scalar_mul(ad.matmul(ad.transpose(centered), centered), 1.0 / n)
    if not np.all(np.isfinite(cov.value)):
        raise NumericalError("Covariance of the representation is not finite")
    return ad.scalar_mul(ad.log_det(cov, eps), -1.0)


def invariance_loss(kind: InvarianceKind, x: ad.Var, y: ad.Var) -> ad.Var:
    match InvarianceKind(kind):
        case InvarianceKind.MMD_POLY2:
            return loss_mmd(x, y, KernelSpec(degree=2))
        case InvarianceKind.MMD_POLY3:
            return loss_mmd(x, y, KernelSpec(degree=3))
        case InvarianceKind.MEAN_VAR:
            return loss_meanvar(x, y)
    raise ConfigurationError(f"Unknown invariance loss: {kind}")


def total_objective(
    batches: Sequence[Matrix],
    model: nn.AutoencoderModel,
    params: dict[str, ad.Var],
    weights: LossWeights,
    invariance: InvarianceKind = InvarianceKind.MMD_POLY2,
    kernel: KernelSpec = KernelSpec(degree=2),
    evaluate_all: bool = False,
    stop_independence_grad: bool = False,
) -> ObjectiveTerms:
    """Reconstruction + λ1·invariance + λ2·independence + δ·log-det penalty over per-environment batches.

    Args:
        batches: One standardized minibatch per environment.
        model: Architecture and standardization of the autoencoder.
        params: Model parameters bound to a tape (see ``nn.bind``).
        weights: Loss weights.
        invariance: Which invariance criterion compares Ŵ across environment pairs.
        kernel: Kernel of the HSIC independence criterion.
        evaluate_all: Also evaluate terms whose weight is 0, for monitoring; they do not enter the total.
        stop_independence_grad: Treat Ŵ as a constant inside the independence term. The value is unchanged,
            but only V̂ receives its gradient, so the term cannot pull variant directions into Ŵ.

    Returns:
        The differentiable total and the value of every term.
    """
    if not batches:
        raise ContractError("At least one environment batch is required")
    if len(batches) < 2 and weights.lambda1 > 0:
        raise ConfigurationError("The invariance loss needs at least two environments when lambda1 > 0")
    tape = next(iter(params.values())).tape

    rec_terms, inv_terms, ind_terms, logdet_terms = [], [], [], []
    w_slices: list[ad.Var] = []
    for batch in batches:
        z = tape.constant(batch)
        latent = nn.encoder_forward(model, params, z)
        w_hat, v_hat = nn.split_latent(model, latent)
        w_slices.append(w_hat)
        rec_terms.append(loss_recon(nn.decoder_forward(model, params, latent), z))
        if weights.lambda2 > 0 or evaluate_all:
            w_fixed = tape.constant(w_hat.value) if stop_independence_grad else w_hat
            ind_terms.append(loss_hsic(w_fixed, v_hat, kernel))
        if weights.delta > 0 or evaluate_all:
            logdet_terms.append(loss_logdet_penalty(latent, weights.logdet_eps))
    if weights.lambda1 > 0 or evaluate_all:
        for j, k in itertools.combinations(range(len(w_slices)), 2):
            inv_terms.append(invariance_loss(invariance, w_slices[j], w_slices[k]))

    def _sum(terms: list[ad.Var]) -> ad.Var | None:
        if not terms:
            return None
        out = terms[0]
        for term in terms[1:]:
            out = ad.add(out, term)
        return out

    total = _sum(rec_terms)
    assert total is not None
    parts = {"rec": total.item(), "inv": 0.0, "ind": 0.0, "logdet": 0.0}
    for key, terms, scale in (
        ("inv", inv_terms, weights.lambda1),
        ("ind", ind_terms, weights.lambda2),
        ("logdet", logdet_terms, weights.delta),
    ):
        summed = _sum(terms)
        if summed is None:
            continue
        parts[key] = summed.item()
        if scale > 0:
            total = ad.add(total, ad.scalar_mul(summed, scale))
    return ObjectiveTerms(total=total, **parts)
