"""Tests the training criteria: closed forms, preconditions and gradients."""

import math
from typing import Sequence

import numpy as np
import pytest

from inviv import autodiff as ad, nn
from inviv.errors import ConfigurationError, ContractError, ShapeError
from inviv.losses import (
    InvarianceKind,
    KernelSpec,
    LossWeights,
    invariance_loss,
    loss_hsic,
    loss_logdet_penalty,
    loss_meanvar,
    loss_mmd,
    loss_recon,
    total_objective,
)
from inviv.simgen import MixingSpec, d2_spec, simulate


def _const(x: np.ndarray) -> ad.Var:
    return ad.Tape().constant(x)


def test_linear_kernel_mmd_is_squared_mean_gap(rng: np.random.Generator) -> None:
    x, y = rng.standard_normal((40, 3)), 1.0 + rng.standard_normal((30, 3))
    value = loss_mmd(_const(x), y, KernelSpec(degree=1, offset=0.0)).item()
    expected = float(np.sum((x.mean(axis=0) - y.mean(axis=0)) ** 2))
    assert value == pytest.approx(expected, rel=1e-10)


def test_mmd_of_identical_samples_is_zero(rng: np.random.Generator) -> None:
    x = rng.standard_normal((20, 2))
    assert loss_mmd(_const(x), x.copy(), KernelSpec(degree=3)).item() == pytest.approx(0.0, abs=1e-9)


def test_mmd_preconditions(rng: np.random.Generator) -> None:
    with pytest.raises(ShapeError):
        loss_mmd(_const(rng.standard_normal((5, 2))), rng.standard_normal((5, 3)), KernelSpec())
    with pytest.raises(ContractError):
        loss_mmd(_const(rng.standard_normal((1, 2))), rng.standard_normal((5, 2)), KernelSpec())


def test_hsic_with_constant_is_zero(rng: np.random.Generator) -> None:
    a = rng.standard_normal((16, 2))
    assert loss_hsic(_const(a), np.ones((16, 1)), KernelSpec()).item() == pytest.approx(0.0, abs=1e-10)


def test_hsic_detects_dependence(rng: np.random.Generator) -> None:
    a = rng.standard_normal((200, 1))
    dependent = loss_hsic(_const(a), a**2, KernelSpec()).item()
    independent = loss_hsic(_const(a), rng.standard_normal((200, 1)), KernelSpec()).item()
    assert dependent > 10 * independent


def test_hsic_needs_four_samples(rng: np.random.Generator) -> None:
    with pytest.raises(ContractError):
        loss_hsic(_const(rng.standard_normal((3, 1))), rng.standard_normal((3, 1)), KernelSpec())


def test_meanvar_closed_form() -> None:
    x = np.array([[0.0], [2.0]])
    y = np.array([[1.0], [1.0]])
    # Mean gap 0, variance gap 1.
    assert loss_meanvar(_const(x), y).item() == pytest.approx(1.0)


def test_logdet_penalty_matches_numpy(rng: np.random.Generator) -> None:
    latent = rng.standard_normal((50, 3))
    cov = np.cov(latent, rowvar=False, bias=True) + 1e-4 * np.eye(3)
    expected = -np.linalg.slogdet(cov)[1]
    assert loss_logdet_penalty(_const(latent)).item() == pytest.approx(expected, rel=1e-10)
    with pytest.raises(ContractError):
        loss_logdet_penalty(_const(rng.standard_normal((3, 3))))


def test_recon_shape_mismatch() -> None:
    with pytest.raises(ShapeError):
        loss_recon(_const(np.ones((2, 2))), np.ones((2, 3)))


def test_kernel_degree_validated() -> None:
    with pytest.raises(ConfigurationError):
        KernelSpec(degree=0)


@pytest.mark.parametrize("kind", list(InvarianceKind))
def test_invariance_loss_gradients(rng: np.random.Generator, kind: InvarianceKind) -> None:
    x, y = 0.5 * rng.standard_normal((8, 2)), 0.5 * rng.standard_normal((6, 2)) + 0.2
    report = ad.grad_check(lambda p: invariance_loss(kind, p[0], p[1]), [x, y])
    assert report.passed, report.max_rel_error


def test_hsic_and_logdet_gradients(rng: np.random.Generator) -> None:
    a, b = 0.5 * rng.standard_normal((8, 2)), 0.5 * rng.standard_normal((8, 1))
    report = ad.grad_check(lambda p: loss_hsic(p[0], p[1], KernelSpec(degree=2)), [a, b])
    assert report.passed, report.max_rel_error
    report = ad.grad_check(lambda p: loss_logdet_penalty(p[0]), [rng.standard_normal((10, 3))])
    assert report.passed, report.max_rel_error


def _small_model() -> nn.AutoencoderModel:
    return nn.build_model(nn.Architecture(d_z=4, p_hat=2, q_hat=1, degree=2, hidden=6), seed=0)


def test_total_objective_gradients(rng: np.random.Generator) -> None:
    model = _small_model()
    names = sorted(model.params)
    batches = [rng.standard_normal((6, 4)), 0.5 + 2.0 * rng.standard_normal((6, 4))]
    weights = LossWeights(lambda1=1.0, lambda2=1.0, delta=0.01)

    def fn(p: Sequence[ad.Var]) -> ad.Var:
        return total_objective(batches, model, dict(zip(names, p)), weights).total

    report = ad.grad_check(fn, [model.params[name] for name in names])
    assert report.passed, report.max_rel_error


def test_zero_weights_reduce_to_reconstruction(rng: np.random.Generator) -> None:
    model = _small_model()
    batches = [rng.standard_normal((6, 4)), rng.standard_normal((6, 4))]
    tape = ad.Tape()
    terms = total_objective(batches, model, nn.bind(model, tape), LossWeights(0.0, 0.0, 0.0))
    assert terms.total.item() == pytest.approx(terms.rec)
    assert terms.inv == terms.ind == terms.logdet == 0.0


def test_evaluate_all_reports_unweighted_terms(rng: np.random.Generator) -> None:
    model = _small_model()
    batches = [rng.standard_normal((6, 4)), rng.standard_normal((6, 4))]
    tape = ad.Tape()
    terms = total_objective(batches, model, nn.bind(model, tape), LossWeights(0.0, 0.0, 0.0), evaluate_all=True)
    assert terms.inv > 0.0
    assert terms.total.item() == pytest.approx(terms.rec)


def test_single_environment_with_invariance_weight(rng: np.random.Generator) -> None:
    model = _small_model()
    tape = ad.Tape()
    with pytest.raises(ConfigurationError):
        total_objective([rng.standard_normal((6, 4))], model, nn.bind(model, tape), LossWeights(lambda1=1.0))


def test_stopped_independence_gradient_only_moves_the_variant_slice(rng: np.random.Generator) -> None:
    model = _small_model()
    batches = [rng.standard_normal((8, 4)), 0.5 + 2.0 * rng.standard_normal((8, 4))]
    weights = LossWeights(lambda1=0.0, lambda2=1.0, delta=0.0)

    def grads(stop: bool, w: LossWeights) -> tuple[float, ad.GradientTable]:
        tape = ad.Tape()
        terms = total_objective(batches, model, nn.bind(model, tape), w, stop_independence_grad=stop)
        return terms.total.item(), ad.backward(terms.total)

    value_full, full = grads(False, weights)
    value_stopped, stopped = grads(True, weights)
    _, recon_only = grads(False, LossWeights(0.0, 0.0, 0.0))
    assert value_stopped == value_full
    # The Ŵ columns of the output layer see the reconstruction gradient only.
    np.testing.assert_allclose(stopped["encoder.6.weight"][:, :2], recon_only["encoder.6.weight"][:, :2], atol=1e-12)
    assert not np.allclose(full["encoder.6.weight"][:, :2], recon_only["encoder.6.weight"][:, :2])
    np.testing.assert_allclose(stopped["encoder.6.weight"][:, 2:], full["encoder.6.weight"][:, 2:], atol=1e-12)


def test_mmd_hand_value() -> None:
    # k(0, 0) = 1, k(0, 1) = 1, k(1, 1) = 4.
    value = loss_mmd(_const(np.array([[0.0]])), np.array([[1.0]]), KernelSpec(degree=2), min_samples=1)
    assert value.item() == pytest.approx(3.0)


def test_mmd_ranks_shifted_samples_above_matched_samples() -> None:
    wins = 0
    for seed in range(20):
        draws = np.random.default_rng(seed).standard_normal((3, 64, 1))
        matched = loss_mmd(_const(draws[0]), draws[1], KernelSpec()).item()
        shifted = loss_mmd(_const(draws[0]), draws[2] + 2.0, KernelSpec()).item()
        wins += shifted > matched
    assert wins >= 19


def test_hsic_is_symmetric_and_permutation_invariant(rng: np.random.Generator) -> None:
    a = rng.standard_normal((30, 2))
    b = a[:, :1] ** 2 + 0.5 * rng.standard_normal((30, 1))
    value = loss_hsic(_const(a), b, KernelSpec()).item()
    assert loss_hsic(_const(b), a, KernelSpec()).item() == pytest.approx(value, rel=1e-10)
    order = rng.permutation(30)
    assert loss_hsic(_const(a[order]), b[order], KernelSpec()).item() == pytest.approx(value, rel=1e-10)


def test_hsic_permutation_test_rejects_dependence(rng: np.random.Generator) -> None:
    a = rng.standard_normal((200, 1))
    b = a**2 + 0.1 * rng.standard_normal((200, 1))
    observed = loss_hsic(_const(a), b, KernelSpec()).item()
    shuffled = [loss_hsic(_const(a), b[rng.permutation(200)], KernelSpec()).item() for _ in range(100)]
    assert observed > max(shuffled)


def test_hsic_matches_scalar_loop() -> None:
    a = np.arange(1.0, 7.0).reshape(-1, 1)
    b = a**2
    m = a.shape[0]
    k = [[(a[i, 0] * a[j, 0] + 1.0) ** 2 for j in range(m)] for i in range(m)]
    l_ = [[(b[i, 0] * b[j, 0] + 1.0) ** 2 for j in range(m)] for i in range(m)]
    h = [[(1.0 if i == j else 0.0) - 1.0 / m for j in range(m)] for i in range(m)]
    trace = 0.0
    for i in range(m):
        for j in range(m):
            for p in range(m):
                for q in range(m):
                    trace += k[i][j] * h[j][p] * l_[p][q] * h[q][i]
    assert loss_hsic(_const(a), b, KernelSpec(degree=2)).item() == pytest.approx(trace / m**2, rel=1e-9)


def test_meanvar_hand_value() -> None:
    # Mean gap 1, variance gap 3.
    assert loss_meanvar(_const(np.array([[0.0], [2.0]])), np.array([[0.0], [4.0]])).item() == pytest.approx(4.0)


def test_logdet_penalty_hand_value() -> None:
    a = math.sqrt(2.0)
    # Zero mean and population covariance diag(2, 2).
    latent = np.array([[a, a], [a, -a], [-a, a], [-a, -a]])
    assert loss_logdet_penalty(_const(latent), eps=0.0).item() == pytest.approx(-math.log(4.0))


def test_logdet_penalty_with_duplicated_column(rng: np.random.Generator) -> None:
    x = rng.standard_normal((50, 1))
    eps = 1e-4
    value = loss_logdet_penalty(_const(np.hstack([x, x])), eps=eps).item()
    # Eigenvalues of the regularized covariance are 2·var(x) + eps and eps.
    expected = -math.log(2.0 * np.var(x) + eps) - math.log(eps)
    assert math.isfinite(value)
    assert value == pytest.approx(expected, rel=1e-6)


def test_oracle_latents_approach_zero_as_batches_grow() -> None:
    data = simulate(d2_spec(), MixingSpec(degree=1), n_train=16_000, n_val=10, seed=0)
    w0, w1, v1 = data.train[0].w, data.train[1].w, data.train[1].v
    assert w0 is not None and w1 is not None and v1 is not None

    def mean_terms(m: int, chunks: int) -> tuple[float, float]:
        inv, ind = [], []
        for c in range(chunks):
            rows = slice(c * m, (c + 1) * m)
            inv.append(loss_mmd(_const(w0[rows]), w1[rows], KernelSpec()).item())
            ind.append(loss_hsic(_const(w1[rows]), v1[rows], KernelSpec()).item())
        return float(np.mean(inv)), float(np.mean(ind))

    small_inv, small_ind = mean_terms(100, 160)
    large_inv, large_ind = mean_terms(1600, 10)
    # Both V-statistics carry an O(1/m) upward bias on independent samples.
    assert large_inv < 0.25 * small_inv
    assert large_ind < 0.25 * small_ind
    assert large_inv < 0.05
    v0 = data.train[0].v
    assert v0 is not None
    mixed = loss_mmd(_const(w0[:1600] + v0[:1600]), w1[:1600] + v1[:1600], KernelSpec()).item()
    assert mixed > 100 * large_inv
