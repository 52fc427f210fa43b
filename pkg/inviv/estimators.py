"""Instrumental-variable estimators and instrument diagnostics.

Every estimator augments its instrument and adjustment blocks with a constant column, so results are
invariant to invertible affine maps of the instruments. Instrument columns collinear with the constant, as
produced by a polynomial mixing with a constant monomial, are dropped from the first stage. Projections are
computed as OLS fits, never as explicit ``n × n`` matrices.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from inviv.errors import ConfigurationError, ContractError, ShapeError, WeakInstrumentError
from inviv.numerics import Matrix, add_intercept, cholesky, independent_columns, singular_values, solve_ols
from inviv.schemas import EstimateReport

logger = logging.getLogger(__name__)

# Guard on the smallest singular value of the instrument-exposure cross moment.
TSLS_RANK_GUARD = 1e-6
RANK_CHECK_THRESHOLD = 1e-3

EGGER_NOTE = (
    "Egger estimate from per-instrument univariate associations followed by an inverse-variance weighted "
    "regression with intercept; an approximation of summary-level MR-Egger on individual-level data"
)


@dataclass(frozen=True)
class RankDiagnostic:
    min_singular_value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.min_singular_value > self.threshold


def _check_rows(**blocks: Matrix) -> int:
    rows = {name: block.shape[0] for name, block in blocks.items()}
    if len(set(rows.values())) != 1:
        raise ShapeError(f"Row counts differ: {rows}")
    return next(iter(rows.values()))


def rank_condition_check(inst: Matrix, d: Matrix, threshold: float = RANK_CHECK_THRESHOLD) -> RankDiagnostic:
    """Smallest singular value of the centered cross moment ``(1/n) instᵀ D``.

    Fewer instrument columns than exposures leave the cross moment rank deficient, reported as 0.
    """
    n = _check_rows(inst=inst, d=d)
    if inst.shape[1] < d.shape[1]:
        return RankDiagnostic(0.0, threshold)
    cross = (inst - inst.mean(axis=0)).T @ (d - d.mean(axis=0)) / n
    sv = singular_values(cross)
    return RankDiagnostic(float(sv[d.shape[1] - 1]), threshold)


def residualize(x: Matrix, controls: Matrix | None, intercept: bool = True) -> Matrix:
    """Residuals of ``x`` after OLS on ``[1, controls]``."""
    n = x.shape[0]
    if controls is None or controls.shape[1] == 0:
        design = np.ones((n, 1)) if intercept else np.zeros((n, 0))
    else:
        _check_rows(x=x, controls=controls)
        design = add_intercept(controls) if intercept else controls
    if design.shape[1] == 0:
        return x.copy()
    return x - design @ solve_ols(design, x)


def _instrument_design(inst: Matrix) -> Matrix:
    """``[1, inst]`` restricted to linearly independent columns, the intercept always kept."""
    design = add_intercept(inst)
    keep = independent_columns(design)
    if keep.size < design.shape[1]:
        logger.debug("Dropping %d collinear instrument columns", design.shape[1] - keep.size)
    return design[:, keep]


def first_stage_f(inst: Matrix, d: Matrix) -> list[float]:
    """Joint F statistic of the instruments in the first-stage regression of each exposure."""
    design = _instrument_design(inst)
    n, p = design.shape[0], design.shape[1] - 1
    fitted = design @ solve_ols(design, d)
    out = []
    for j in range(d.shape[1]):
        rss = float(np.sum((d[:, j] - fitted[:, j]) ** 2))
        tss = float(np.sum((d[:, j] - d[:, j].mean()) ** 2))
        dof = n - p - 1
        out.append(math.inf if rss == 0.0 or dof <= 0 else ((tss - rss) / p) / (rss / dof))
    return out


def _bias(theta_hat: Matrix, theta_true: Matrix | None) -> list[float] | None:
    if theta_true is None:
        return None
    truth = np.asarray(theta_true, dtype=np.float64).reshape(-1)
    if truth.size != theta_hat.size:
        raise ShapeError(f"True effect has {truth.size} entries, estimate has {theta_hat.size}")
    return (theta_hat.reshape(-1) - truth).tolist()


def tsls(
    w: Matrix,
    d: Matrix,
    y: Matrix,
    theta_true: Matrix | None = None,
    method: str = "2sls",
    rank_guard: float = TSLS_RANK_GUARD,
) -> EstimateReport:
    """Two-stage least squares with instruments ``[1, W]`` and regressors ``[1, D]``.

    Args:
        w: Instruments, ``n × p``.
        d: Exposures, ``n × d``.
        y: Outcome, ``n × 1``.
        theta_true: True effect, used to fill in the bias.
        method: Tag stored in the report.
        rank_guard: Minimum singular value of the instrument-exposure cross moment.

    Returns:
        Point estimate, homoskedastic standard errors and first-stage diagnostics.

    Raises:
        ContractError: If there are not more rows than instruments.
        WeakInstrumentError: If the rank condition fails.
    """
    n = _check_rows(w=w, d=d, y=y)
    p = w.shape[1]
    if y.shape[1] != 1:
        raise ShapeError(f"Outcome must have one column, got {y.shape[1]}")
    if n <= p + 1:
        raise ContractError(f"2SLS needs more rows than instruments, got n={n}, p={p}")
    rank = rank_condition_check(w, d, rank_guard)
    if not rank.passed:
        raise WeakInstrumentError(rank.min_singular_value, rank_guard)

    inst = _instrument_design(w)
    d_hat = inst @ solve_ols(inst, d)
    x_hat = add_intercept(d_hat)
    beta = solve_ols(x_hat, y)
    resid = y - add_intercept(d) @ beta
    sigma2 = (resid.T @ resid).item() / n
    cov = sigma2 * cholesky(x_hat.T @ x_hat).inverse()
    theta_hat = beta[1:, 0]
    logger.debug("%s: theta_hat=%s (n=%d, p=%d)", method, theta_hat, n, p)
    return EstimateReport(
        method=method,
        theta_hat=theta_hat.tolist(),
        se=np.sqrt(np.diag(cov)[1:]).tolist(),
        bias=_bias(theta_hat, theta_true),
        instrument_dim=p,
        min_sv_first_stage=rank.min_singular_value,
        n=n,
        first_stage_f=first_stage_f(w, d),
    )


def po_tsls(
    w: Matrix,
    v: Matrix,
    d: Matrix,
    y: Matrix,
    theta_true: Matrix | None = None,
    method: str = "po_2sls",
    rank_guard: float = TSLS_RANK_GUARD,
) -> EstimateReport:
    """2SLS after linearly partialling ``[1, V]`` out of the instruments, exposures and outcome."""
    _check_rows(w=w, v=v, d=d, y=y)
    return tsls(
        residualize(w, v),
        residualize(d, v),
        residualize(y, v),
        theta_true=theta_true,
        method=method,
        rank_guard=rank_guard,
    )


def env_indicators(labels: np.ndarray) -> Matrix:
    """One-hot environment indicators with the first level dropped."""
    levels = np.unique(labels)
    if levels.size < 2:
        raise ConfigurationError(f"Partialling out environments needs at least two labels, got {levels.tolist()}")
    return (labels.reshape(-1, 1) == levels[1:].reshape(1, -1)).astype(np.float64)


def po_env_indicator(labels: np.ndarray, *matrices: Matrix) -> tuple[Matrix, ...]:
    """Linearly partials the environment indicator (with intercept) out of every matrix.

    Within each environment the residuals equal the matrix minus its environment mean.
    """
    indicators = env_indicators(np.asarray(labels).reshape(-1))
    return tuple(residualize(m, indicators) for m in matrices)


def _univariate_association(x: Matrix, target: Matrix) -> tuple[Matrix, Matrix]:
    """Slopes and standard errors of ``target ~ 1 + x`` for a single column ``x``."""
    n = x.shape[0]
    design = add_intercept(x)
    coef = solve_ols(design, target)
    resid = target - design @ coef
    sxx = float(np.sum((x - x.mean()) ** 2))
    sigma2 = np.sum(resid**2, axis=0) / (n - 2)
    return coef[1], np.sqrt(sigma2 / sxx)


def mr_egger(
    z: Matrix,
    d: Matrix,
    y: Matrix,
    theta_true: Matrix | None = None,
    method: str = "egger",
) -> EstimateReport:
    """MR-Egger regression across the columns of ``z`` treated as separate instruments.

    Each instrument contributes its univariate associations with every exposure and with the outcome.
    The outcome associations are regressed on ``[1, exposure associations]`` with weights
    ``1 / SE²``; the slopes are the effect estimate and the intercept is the directional pleiotropy term.

    Raises:
        ConfigurationError: If there are not more instruments than exposures plus one.
    """
    n = _check_rows(z=z, d=d, y=y)
    n_inst, k = z.shape[1], d.shape[1]
    if n_inst <= k + 1:
        raise ConfigurationError(f"MR-Egger needs more than {k + 1} instruments, got {n_inst}")

    beta_d = np.zeros((n_inst, k))
    beta_y = np.zeros((n_inst, 1))
    se_y = np.zeros((n_inst, 1))
    for j in range(n_inst):
        beta_d[j], _ = _univariate_association(z[:, j : j + 1], d)
        slope, se = _univariate_association(z[:, j : j + 1], y)
        beta_y[j], se_y[j] = slope, se

    weights = 1.0 / se_y**2
    design = add_intercept(beta_d)
    root = np.sqrt(weights)
    coef = solve_ols(design * root, beta_y * root)
    resid = beta_y - design @ coef
    dof = n_inst - k - 1
    scale = max(1.0, float(np.sum(weights * resid**2)) / dof)
    cov = scale * cholesky((design * root).T @ (design * root)).inverse()
    theta_hat = coef[1:, 0]
    rank = rank_condition_check(z, d)
    return EstimateReport(
        method=method,
        theta_hat=theta_hat.tolist(),
        se=np.sqrt(np.diag(cov)[1:]).tolist(),
        bias=_bias(theta_hat, theta_true),
        instrument_dim=n_inst,
        min_sv_first_stage=rank.min_singular_value,
        n=n,
        first_stage_f=first_stage_f(z, d),
        egger_intercept=float(coef[0, 0]),
        notes=[EGGER_NOTE],
    )
