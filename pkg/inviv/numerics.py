"""Dense matrix algebra and linear solvers.

Matrices are two-dimensional ``float64`` numpy arrays. The routines here are
small and explicit on purpose: the factorizations report which pivot failed,
and the eigen-solvers use a fixed sweep order so results are reproducible.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

from inviv.errors import NotPositiveDefiniteError, ShapeError, SingularMatrixError

Matrix = NDArray[np.float64]

# Relative pivot threshold for the normal equations in ``solve_ols``.
OLS_PIVOT_TOL = 1e-10

SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(x: ArrayLike) -> Matrix:
    """Converts the input to a 2-D float64 array, promoting vectors to columns."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"Expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def add_intercept(x: Matrix) -> Matrix:
    """Prepends a column of ones."""
    return np.hstack([np.ones((x.shape[0], 1)), x])


def population_covariance(x: Matrix) -> Matrix:
    """Covariance of the rows of ``x`` with the 1/n normalization."""
    centered = x - x.mean(axis=0, keepdims=True)
    return centered.T @ centered / x.shape[0]


@dataclass(frozen=True)
class CholeskyFactor:
    lower: Matrix
    dim: int

    def solve(self, b: Matrix) -> Matrix:
        """Solves ``(L Lᵀ) x = b``."""
        if b.shape[0] != self.dim:
            raise ShapeError(f"Right-hand side has {b.shape[0]} rows, factor has dimension {self.dim}")
        return back_substitute(self.lower.T, forward_substitute(self.lower, b))

    def inverse(self) -> Matrix:
        return self.solve(np.eye(self.dim))

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.lower))))


def cholesky(a: Matrix) -> CholeskyFactor:
    """Column-oriented Cholesky factorization of a symmetric positive-definite matrix.

    Args:
        a: Square symmetric matrix.

    Returns:
        The lower-triangular factor.

    Raises:
        ShapeError: If ``a`` is not square or not symmetric.
        NotPositiveDefiniteError: If a non-positive pivot is encountered.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky expects a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise ShapeError("cholesky expects a symmetric matrix")

    n = a.shape[0]
    lower = np.zeros_like(a, dtype=np.float64)
    for j in range(n):
        pivot = a[j, j] - float(lower[j, :j] @ lower[j, :j])
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(j, float(pivot))
        lower[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return CholeskyFactor(lower=lower, dim=n)


def forward_substitute(lower: Matrix, b: Matrix) -> Matrix:
    x = np.zeros_like(b, dtype=np.float64)
    for i in range(lower.shape[0]):
        x[i] = (b[i] - lower[i, :i] @ x[:i]) / lower[i, i]
    return x


def back_substitute(upper: Matrix, b: Matrix) -> Matrix:
    n = upper.shape[0]
    x = np.zeros_like(b, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - upper[i, i + 1 :] @ x[i + 1 :]) / upper[i, i]
    return x


def solve_ols(x: Matrix, y: Matrix) -> Matrix:
    """Least-squares coefficients ``argmin ||x β - y||²`` via Cholesky on the normal equations.

    Args:
        x: Design matrix with shape ``(n, k)``, ``n >= k``.
        y: Responses with shape ``(n, m)``.

    Returns:
        Coefficients with shape ``(k, m)``.

    Raises:
        ShapeError: On row mismatch or an underdetermined design.
        SingularMatrixError: If the normal equations are numerically singular.
    """
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"solve_ols row mismatch: X has {x.shape[0]} rows, y has {y.shape[0]}")
    n, k = x.shape
    if n < k:
        raise ShapeError(f"solve_ols needs at least as many rows as columns, got {n} < {k}")

    gram = x.T @ x
    gram = 0.5 * (gram + gram.T)
    try:
        factor = cholesky(gram)
    except NotPositiveDefiniteError as e:
        raise SingularMatrixError("Design matrix is rank deficient", e.pivot_index, e.pivot) from e

    # Squared pivots of the factor are the Schur complements of the Gram matrix.
    pivots = np.diag(factor.lower) ** 2
    threshold = OLS_PIVOT_TOL * float(np.max(np.diag(gram)))
    smallest = int(np.argmin(pivots))
    if pivots[smallest] <= threshold:
        raise SingularMatrixError("Design matrix is numerically rank deficient", smallest, float(pivots[smallest]))
    return factor.solve(x.T @ y)


def independent_columns(x: Matrix, tol: float = OLS_PIVOT_TOL) -> NDArray[np.int64]:
    """Indices of a maximal set of linearly independent columns, chosen greedily left to right.

    A column is dropped when its residual after projection on the columns kept so far has squared norm
    at most ``tol`` times its own squared norm.
    """
    gram = x.T @ x
    keep: list[int] = []
    for j in range(x.shape[1]):
        norm2 = float(gram[j, j])
        if norm2 <= 0.0:
            continue
        schur = norm2
        if keep:
            cross = gram[keep, j : j + 1]
            schur -= (cross.T @ cholesky(gram[np.ix_(keep, keep)]).solve(cross)).item()
        if schur > tol * norm2:
            keep.append(j)
    return np.asarray(keep, dtype=np.int64)


def _jacobi_rotation(app: float, aqq: float, apq: float) -> tuple[float, float]:
    zeta = (aqq - app) / (2.0 * apq)
    t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, c * t


def symmetric_eigenvalues(a: Matrix, tol: float = JACOBI_TOL) -> NDArray[np.float64]:
    """Eigenvalues of a symmetric matrix by the cyclic Jacobi method, in ascending order."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"Expected a square matrix, got {a.shape}")
    work = 0.5 * (a + a.T)
    n = work.shape[0]
    scale = float(np.linalg.norm(work)) or 1.0
    for _ in range(JACOBI_MAX_SWEEPS):
        off = math.sqrt(max(0.0, float(np.sum(work**2) - np.sum(np.diag(work) ** 2))))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if apq == 0.0:
                    continue
                c, s = _jacobi_rotation(work[p, p], work[q, q], apq)
                col_p, col_q = work[:, p].copy(), work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p, row_q = work[p, :].copy(), work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
    return np.sort(np.diag(work))


def singular_values(a: Matrix, tol: float = JACOBI_TOL) -> NDArray[np.float64]:
    """Singular values by one-sided (Hestenes) Jacobi, in descending order.

    The iteration orthogonalizes column pairs, which is Jacobi diagonalization of ``aᵀa``
    without forming the product. Values below ``max(m, n) * eps * σ_max`` are reported as 0.
    """
    if a.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got {a.shape}")
    work = np.array(a.T if a.shape[0] < a.shape[1] else a, dtype=np.float64)
    if work.size == 0:
        return np.zeros(0)
    n = work.shape[1]
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(work[:, p] @ work[:, p])
                beta = float(work[:, q] @ work[:, q])
                gamma = float(work[:, p] @ work[:, q])
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                c, s = _jacobi_rotation(alpha, beta, gamma)
                col_p = work[:, p].copy()
                work[:, p] = c * col_p - s * work[:, q]
                work[:, q] = s * col_p + c * work[:, q]
        if not rotated:
            break
    values = np.sort(np.linalg.norm(work, axis=0))[::-1]
    cutoff = max(a.shape) * np.finfo(np.float64).eps * values[0]
    values[values <= cutoff] = 0.0
    return values


def min_singular_value(a: Matrix) -> float:
    if a.size == 0:
        return 0.0
    return float(singular_values(a)[-1])


@lru_cache(maxsize=64)
def _monomial_exponents(width: int, degree: int) -> tuple[tuple[int, ...], ...]:
    rows: list[tuple[int, ...]] = []
    for order in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(width), order):
            exps = [0] * width
            for idx in combo:
                exps[idx] += 1
            rows.append(tuple(exps))
    return tuple(rows)


def monomial_exponents(width: int, degree: int) -> NDArray[np.int64]:
    """Exponent table of all monomials up to ``degree``, graded lexicographic, constant first.

    The table has ``C(width + degree, degree)`` rows and ``width`` columns.
    """
    if width < 1 or degree < 0:
        raise ShapeError(f"Invalid monomial table request: width={width}, degree={degree}")
    return np.array(_monomial_exponents(width, degree), dtype=np.int64).reshape(-1, width)


def monomial_count(width: int, degree: int) -> int:
    return math.comb(width + degree, degree)


def monomial_features(u: Matrix, exponents: NDArray[np.int64]) -> Matrix:
    """Evaluates every monomial of ``exponents`` at every row of ``u``."""
    if u.shape[1] != exponents.shape[1]:
        raise ShapeError(f"Monomial table expects width {exponents.shape[1]}, got {u.shape[1]}")
    out = np.ones((u.shape[0], exponents.shape[0]))
    for j in range(exponents.shape[1]):
        out *= u[:, j : j + 1] ** exponents[:, j][None, :]
    return out
