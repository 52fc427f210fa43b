"""Defines the multi-environment data simulator and the mixing functions.

The structural equations of one environment ``k`` are, row-wise::

    H = ε_H
    V = H η_kᵀ + ε_V
    W = ε_W
    D = V β1 + W β2 + H α1 + ε_D
    Y = D θ + H α2 + ε_Y

and the observed instruments are ``Z = f(W, V)`` for a mixing function ``f`` that is shared by
all environments. Only the law of ``V`` (through ``η_k``) changes across environments.
"""

import enum
import functools
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from inviv.errors import ConfigurationError, MixingSeedError, NotPositiveDefiniteError, ShapeError
from inviv.numerics import (
    Matrix,
    cholesky,
    min_singular_value,
    monomial_count,
    monomial_exponents,
    monomial_features,
    symmetric_eigenvalues,
)

logger = logging.getLogger(__name__)

MIXING_RANK_TOL = 1e-6
MIXING_MAX_RESAMPLES = 5
MLP_SINGULAR_VALUE_RANGE = (0.5, 2.0)
DEFAULT_NEGATIVE_SLOPE = 0.2
SHIFT_TOL = 1e-10

D2_COVARIANCE = [[1.0, 0.5], [0.5, 1.0]]


class NoiseLaw(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    UNIFORM = "uniform"


class MixingKind(str, enum.Enum):
    INJECTIVE_POLYNOMIAL = "injective_polynomial"
    INVERTIBLE_MLP = "invertible_mlp"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"


def _eye(n: int) -> list[list[float]]:
    return np.eye(n).tolist()


@dataclass
class ScmSpec:
    """Declarative description of the linear structural model.

    Loadings are stored as nested lists so the spec can round-trip through YAML; use the ``*_matrix``
    accessors for arrays. Shapes: ``alpha1`` is ``h × d``, ``alpha2`` has length ``h``, ``beta1`` is
    ``q × d``, ``beta2`` is ``p × d``, each ``eta[k]`` is ``q × h``.
    """

    p: int = 2
    q: int = 2
    d: int = 2
    h: int = 2
    theta: list[float] = field(default_factory=lambda: [1.0, 1.0])
    alpha1: list[list[float]] = field(default_factory=lambda: _eye(2))
    alpha2: list[float] = field(default_factory=lambda: [1.0, 1.0])
    beta1: list[list[float]] = field(default_factory=lambda: _eye(2))
    beta2: list[list[float]] = field(default_factory=lambda: _eye(2))
    eta: list[list[list[float]]] = field(default_factory=lambda: [_eye(2), (2.0 * np.eye(2)).tolist()])
    sigma_w: list[list[float]] = field(default_factory=lambda: [row[:] for row in D2_COVARIANCE])
    sigma_v: list[list[float]] = field(default_factory=lambda: [row[:] for row in D2_COVARIANCE])
    var_h: float = 1.0
    var_d: float = 1.0
    var_y: float = 1.0
    noise_law: NoiseLaw = NoiseLaw.GAUSSIAN
    env_size_ratio: Optional[list[float]] = None

    @property
    def num_envs(self) -> int:
        return len(self.eta)

    def theta_vector(self) -> Matrix:
        return np.asarray(self.theta, dtype=np.float64).reshape(-1, 1)

    def alpha1_matrix(self) -> Matrix:
        return np.asarray(self.alpha1, dtype=np.float64).reshape(self.h, self.d)

    def alpha2_vector(self) -> Matrix:
        return np.asarray(self.alpha2, dtype=np.float64).reshape(self.h, 1)

    def beta1_matrix(self) -> Matrix:
        return np.asarray(self.beta1, dtype=np.float64).reshape(self.q, self.d)

    def beta2_matrix(self) -> Matrix:
        return np.asarray(self.beta2, dtype=np.float64).reshape(self.p, self.d)

    def eta_matrix(self, env: int) -> Matrix:
        return np.asarray(self.eta[env], dtype=np.float64).reshape(self.q, self.h)

    def sigma_w_matrix(self) -> Matrix:
        return np.asarray(self.sigma_w, dtype=np.float64)

    def sigma_v_matrix(self) -> Matrix:
        return np.asarray(self.sigma_v, dtype=np.float64)

    def v_covariance(self, env: int) -> Matrix:
        """Population covariance of ``V`` in environment ``env``."""
        eta = self.eta_matrix(env)
        return self.var_h * eta @ eta.T + self.sigma_v_matrix()

    def validate(self) -> None:
        """Checks dimensions, positive definiteness and that the environments actually differ.

        Raises:
            ConfigurationError: On any inconsistency.
        """
        expected = {
            "theta": (np.asarray(self.theta).size, self.d),
            "alpha2": (np.asarray(self.alpha2).size, self.h),
        }
        for name, (got, want) in expected.items():
            if got != want:
                raise ConfigurationError(f"ScmSpec.{name} has {got} entries, expected {want}")
        shapes = {
            "alpha1": (self.alpha1, (self.h, self.d)),
            "beta1": (self.beta1, (self.q, self.d)),
            "beta2": (self.beta2, (self.p, self.d)),
            "sigma_w": (self.sigma_w, (self.p, self.p)),
            "sigma_v": (self.sigma_v, (self.q, self.q)),
        }
        for name, (value, shape) in shapes.items():
            if np.asarray(value).shape != shape:
                raise ConfigurationError(f"ScmSpec.{name} has shape {np.asarray(value).shape}, expected {shape}")
        if self.num_envs < 1:
            raise ConfigurationError("ScmSpec needs at least one environment")
        for k, eta in enumerate(self.eta):
            if np.asarray(eta).shape != (self.q, self.h):
                raise ConfigurationError(
                    f"ScmSpec.eta[{k}] has shape {np.asarray(eta).shape}, expected {(self.q, self.h)}"
                )
        for name, cov in (("sigma_w", self.sigma_w_matrix()), ("sigma_v", self.sigma_v_matrix())):
            try:
                cholesky(cov)
            except (NotPositiveDefiniteError, ShapeError) as e:
                raise ConfigurationError(f"ScmSpec.{name} must be symmetric positive definite: {e}") from e
        for name in ("var_h", "var_d", "var_y"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"ScmSpec.{name} must be non-negative")
        if self.num_envs > 1 and all(np.array_equal(self.eta[0], eta) for eta in self.eta[1:]):
            raise ConfigurationError("All environments share the same eta; the variant shift is unidentifiable")
        if self.env_size_ratio is not None:
            if len(self.env_size_ratio) != self.num_envs or min(self.env_size_ratio) <= 0:
                raise ConfigurationError("ScmSpec.env_size_ratio needs one positive entry per environment")


@dataclass(frozen=True)
class MixingSpec:
    kind: MixingKind = MixingKind.INJECTIVE_POLYNOMIAL
    degree: int = 1
    d_z: Optional[int] = None
    seed: int = 0
    negative_slope: float = DEFAULT_NEGATIVE_SLOPE

    def resolved_d_z(self, latent_dim: int) -> int:
        """Output width: the monomial count for polynomial mixing, the latent width for the MLP."""
        if self.d_z is not None:
            return self.d_z
        if self.kind == MixingKind.INJECTIVE_POLYNOMIAL:
            return monomial_count(latent_dim, self.degree)
        return latent_dim

    @property
    def label(self) -> str:
        if self.kind == MixingKind.INJECTIVE_POLYNOMIAL:
            return f"poly{self.degree}"
        return "mlp"


@dataclass(frozen=True)
class PolynomialMixing:
    exponents: np.ndarray
    coefficients: Matrix

    @property
    def d_z(self) -> int:
        return self.coefficients.shape[0]

    def __call__(self, u: Matrix) -> Matrix:
        return monomial_features(u, self.exponents) @ self.coefficients.T


@dataclass(frozen=True)
class InvertibleMlpMixing:
    weights: tuple[Matrix, ...]
    biases: tuple[Matrix, ...]
    negative_slope: float

    def __call__(self, u: Matrix) -> Matrix:
        x = u
        for weight, bias in zip(self.weights, self.biases):
            pre = x @ weight.T + bias
            x = np.where(pre >= 0, pre, self.negative_slope * pre)
        return x

    def inverse(self, z: Matrix) -> Matrix:
        x = z
        for weight, bias in zip(reversed(self.weights), reversed(self.biases)):
            pre = np.where(x >= 0, x, x / self.negative_slope)
            x = np.linalg.solve(weight, (pre - bias).T).T
        return x

    @classmethod
    def identity(cls, width: int, layers: int = 2) -> "InvertibleMlpMixing":
        eye, zero = np.eye(width), np.zeros((1, width))
        return cls(weights=(eye,) * layers, biases=(zero,) * layers, negative_slope=1.0)


@functools.lru_cache(maxsize=32)
def _build_polynomial(spec: MixingSpec, latent_dim: int) -> PolynomialMixing:
    exponents = monomial_exponents(latent_dim, spec.degree)
    n_features = exponents.shape[0]
    d_z = spec.resolved_d_z(latent_dim)
    if d_z < n_features:
        raise ConfigurationError(
            f"Polynomial mixing of degree {spec.degree} on {latent_dim} latents needs d_z >= {n_features}, got {d_z}"
        )
    rng = np.random.default_rng(spec.seed)
    for attempt in range(MIXING_MAX_RESAMPLES):
        coefficients = rng.standard_normal((d_z, n_features))
        sv = min_singular_value(coefficients)
        if sv > MIXING_RANK_TOL:
            return PolynomialMixing(exponents=exponents, coefficients=coefficients)
        logger.warning("Mixing coefficients rank deficient on attempt %d (min sv %.3e)", attempt + 1, sv)
    raise MixingSeedError(f"Mixing seed {spec.seed} produced rank-deficient coefficients {MIXING_MAX_RESAMPLES} times")


@functools.lru_cache(maxsize=32)
def _build_mlp(spec: MixingSpec, latent_dim: int, layers: int = 2) -> InvertibleMlpMixing:
    if spec.resolved_d_z(latent_dim) != latent_dim:
        raise ConfigurationError(f"Invertible MLP mixing needs d_z == p + q = {latent_dim}, got {spec.d_z}")
    if not spec.negative_slope > 0:
        raise ConfigurationError("Leaky-ReLU slope of the mixing must be positive")
    rng = np.random.default_rng(spec.seed)
    lo, hi = MLP_SINGULAR_VALUE_RANGE
    weights, biases = [], []
    for _ in range(layers):
        u, s, vt = np.linalg.svd(rng.standard_normal((latent_dim, latent_dim)))
        weights.append(u @ np.diag(np.clip(s, lo, hi)) @ vt)
        biases.append(0.1 * rng.standard_normal((1, latent_dim)))
    return InvertibleMlpMixing(weights=tuple(weights), biases=tuple(biases), negative_slope=spec.negative_slope)


def mix_polynomial(u: Matrix, spec: MixingSpec, coefficients: Matrix | None = None) -> Matrix:
    """Injective polynomial mixing ``Z = A · monomials(U)``.

    Args:
        u: Latents ``(W, V)`` stacked column-wise.
        spec: Mixing spec; ``spec.seed`` determines ``A``.
        coefficients: Explicit ``A`` of shape ``(d_z, C(width + degree, degree))``, overriding the seed.

    Returns:
        The observed instruments.
    """
    if spec.kind != MixingKind.INJECTIVE_POLYNOMIAL:
        raise ConfigurationError(f"mix_polynomial called with a {spec.kind.value} spec")
    if coefficients is None:
        return _build_polynomial(spec, u.shape[1])(u)
    exponents = monomial_exponents(u.shape[1], spec.degree)
    if coefficients.shape[1] != exponents.shape[0]:
        raise ShapeError(f"Coefficient matrix needs {exponents.shape[0]} columns, got {coefficients.shape[1]}")
    return PolynomialMixing(exponents=exponents, coefficients=coefficients)(u)


def mix_invertible_mlp(u: Matrix, spec: MixingSpec) -> Matrix:
    if spec.kind != MixingKind.INVERTIBLE_MLP:
        raise ConfigurationError(f"mix_invertible_mlp called with a {spec.kind.value} spec")
    return _build_mlp(spec, u.shape[1])(u)


def build_mixing(spec: MixingSpec, latent_dim: int) -> PolynomialMixing | InvertibleMlpMixing:
    if spec.kind == MixingKind.INJECTIVE_POLYNOMIAL:
        return _build_polynomial(spec, latent_dim)
    return _build_mlp(spec, latent_dim)


@dataclass(frozen=True)
class EnvDataset:
    """Observables of one environment and split, plus the oracle latents when simulated."""

    env: int
    split: Split
    seed: int
    z: Matrix
    d: Matrix
    y: Matrix
    w: Matrix | None = None
    v: Matrix | None = None
    h: Matrix | None = None

    def __post_init__(self) -> None:
        n = self.z.shape[0]
        for name in ("d", "y", "w", "v", "h"):
            block = getattr(self, name)
            if block is not None and block.shape[0] != n:
                raise ShapeError(f"Block {name} has {block.shape[0]} rows, expected {n}")
        oracle = [getattr(self, name) is None for name in ("w", "v", "h")]
        if any(oracle) and not all(oracle):
            raise ShapeError("Oracle blocks W, V and H must be present together")

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def has_oracle(self) -> bool:
        return self.w is not None


@dataclass(frozen=True)
class PooledData:
    z: Matrix
    d: Matrix
    y: Matrix
    env: np.ndarray
    w: Matrix | None = None
    v: Matrix | None = None
    h: Matrix | None = None

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def has_oracle(self) -> bool:
        return self.w is not None


def pool(datasets: Sequence[EnvDataset]) -> PooledData:
    """Stacks several environments row-wise, keeping an environment label per row."""
    if not datasets:
        raise ShapeError("Cannot pool an empty list of datasets")
    oracle = all(ds.has_oracle for ds in datasets)

    def _stack(name: str) -> Matrix:
        return np.vstack([getattr(ds, name) for ds in datasets])

    return PooledData(
        z=_stack("z"),
        d=_stack("d"),
        y=_stack("y"),
        env=np.concatenate([np.full(ds.n, ds.env, dtype=np.int64) for ds in datasets]),
        w=_stack("w") if oracle else None,
        v=_stack("v") if oracle else None,
        h=_stack("h") if oracle else None,
    )


@dataclass(frozen=True)
class SimulatedData:
    spec: ScmSpec
    mixing: MixingSpec
    seed: int
    train: tuple[EnvDataset, ...]
    val: tuple[EnvDataset, ...]

    @property
    def num_envs(self) -> int:
        return len(self.train)

    @property
    def d_z(self) -> int:
        return self.train[0].d_z

    def split(self, split: Split) -> tuple[EnvDataset, ...]:
        return self.train if Split(split) == Split.TRAIN else self.val


def _standard_noise(rng: np.random.Generator, law: NoiseLaw, shape: tuple[int, int]) -> Matrix:
    match NoiseLaw(law):
        case NoiseLaw.GAUSSIAN:
            return rng.standard_normal(shape)
        case NoiseLaw.LAPLACE:
            return rng.laplace(scale=1.0 / math.sqrt(2.0), size=shape)
        case NoiseLaw.UNIFORM:
            return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)
    raise ConfigurationError(f"Unknown noise law: {law}")


def _correlated_noise(rng: np.random.Generator, law: NoiseLaw, n: int, cov: Matrix) -> Matrix:
    return _standard_noise(rng, law, (n, cov.shape[0])) @ cholesky(cov).lower.T


def _scaled_noise(rng: np.random.Generator, law: NoiseLaw, n: int, width: int, var: float) -> Matrix:
    # Always draw, so zeroing one variance does not shift the other streams.
    return math.sqrt(var) * _standard_noise(rng, law, (n, width))


def _env_seed(seed: int, env: int, split: Split) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, env, 0 if split == Split.TRAIN else 1])


def simulate_env(
    spec: ScmSpec,
    mixing: MixingSpec,
    env: int,
    n: int,
    seed: int,
    split: Split = Split.TRAIN,
) -> EnvDataset:
    """Samples one environment and split; the random stream depends only on ``(seed, env, split)``."""
    rng = np.random.default_rng(_env_seed(seed, env, split))
    law = spec.noise_law
    h = _scaled_noise(rng, law, n, spec.h, spec.var_h)
    v = h @ spec.eta_matrix(env).T + _correlated_noise(rng, law, n, spec.sigma_v_matrix())
    w = _correlated_noise(rng, law, n, spec.sigma_w_matrix())
    d = (
        v @ spec.beta1_matrix()
        + w @ spec.beta2_matrix()
        + h @ spec.alpha1_matrix()
        + _scaled_noise(rng, law, n, spec.d, spec.var_d)
    )
    y = d @ spec.theta_vector() + h @ spec.alpha2_vector() + _scaled_noise(rng, law, n, 1, spec.var_y)
    z = build_mixing(mixing, spec.p + spec.q)(np.hstack([w, v]))
    return EnvDataset(env=env, split=split, seed=seed, z=z, d=d, y=y, w=w, v=v, h=h)


def simulate(
    spec: ScmSpec,
    mixing: MixingSpec,
    n_train: int = 10_000,
    n_val: int = 2_000,
    seed: int = 0,
) -> SimulatedData:
    """Samples every environment of ``spec`` for the train and validation splits.

    Args:
        spec: The structural model.
        mixing: The mixing function; its weights depend on ``mixing.seed`` only.
        n_train: Training rows per environment (scaled by ``spec.env_size_ratio`` when set).
        n_val: Validation rows per environment (scaled likewise).
        seed: Data seed.

    Returns:
        The simulated datasets, a pure function of the inputs.
    """
    spec.validate()
    ratios = spec.env_size_ratio or [1.0] * spec.num_envs
    train, val = [], []
    for env, ratio in enumerate(ratios):
        train.append(simulate_env(spec, mixing, env, max(1, round(n_train * ratio)), seed, Split.TRAIN))
        val.append(simulate_env(spec, mixing, env, max(1, round(n_val * ratio)), seed, Split.VAL))
    logger.debug("Simulated %d environments (seed %d, d_z %d)", spec.num_envs, seed, train[0].d_z)
    return SimulatedData(spec=spec, mixing=mixing, seed=seed, train=tuple(train), val=tuple(val))


def d2_spec() -> ScmSpec:
    """The two-environment model with ``η = (I, 2I)``."""
    return ScmSpec()


def three_env_spec() -> ScmSpec:
    """Three environments where V¹ shifts between the first two and V² between the first and third."""
    return ScmSpec(eta=[_eye(2), [[2.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 2.0]]])


@dataclass(frozen=True)
class PairShift:
    envs: tuple[int, int]
    min_eigenvalue: float
    max_eigenvalue: float
    shifted_coordinates: tuple[int, ...]

    @property
    def definite(self) -> bool:
        """Whether every nonzero projection of V changes its variance between the two environments."""
        return self.min_eigenvalue > SHIFT_TOL or self.max_eigenvalue < -SHIFT_TOL


@dataclass(frozen=True)
class VarianceShiftReport:
    pairs: tuple[PairShift, ...]
    q: int

    @property
    def any_definite(self) -> bool:
        return any(pair.definite for pair in self.pairs)

    @property
    def covered(self) -> bool:
        """Whether the shifted coordinates of all pairs together cover every V coordinate."""
        seen = set(itertools.chain.from_iterable(pair.shifted_coordinates for pair in self.pairs))
        return seen == set(range(self.q))

    @property
    def satisfied(self) -> bool:
        return self.any_definite or self.covered


def variance_shift_report(spec: ScmSpec) -> VarianceShiftReport:
    """Checks the covariance shift of V between every pair of environments.

    A pair whose covariance difference is definite changes the law of every projection ``uᵀV``. A
    collection of pairs whose (diagonal) shifts together touch every coordinate covers V coordinate-wise.
    """
    pairs = []
    for j, k in itertools.combinations(range(spec.num_envs), 2):
        diff = spec.v_covariance(k) - spec.v_covariance(j)
        eig = symmetric_eigenvalues(diff)
        shifted = tuple(int(i) for i in np.flatnonzero(np.abs(np.diag(diff)) > SHIFT_TOL))
        pairs.append(PairShift((j, k), float(eig[0]), float(eig[-1]), shifted))
    return VarianceShiftReport(pairs=tuple(pairs), q=spec.q)


class CounterexampleName(str, enum.Enum):
    EFFICIENCY_LOSS_C4 = "efficiency_loss_C4"
    COLLIDER_C5 = "collider_C5"
    INSUFFICIENT_C2 = "insufficient_C2"
    NONIDENT_V_C3 = "nonident_V_C3"


@dataclass(frozen=True)
class Counterexample:
    """A single-environment dataset with designated learned-representation substitutes.

    ``expected`` holds the closed-form reference quantities of the construction, e.g. the probability
    limit of an estimator (``plim_2sls``, ``plim_po_2sls``) or ``n`` times its asymptotic variance
    (``n_var_2sls``, ``n_var_po_2sls``). ``n_var_po_2sls`` treats the structural noise as untouched by
    partialling; ``n_var_po_2sls_partialled`` is the value the sample estimator actually converges to.
    """

    name: CounterexampleName
    dataset: EnvDataset
    w_hat: Matrix
    v_hat: Matrix
    theta: Matrix
    expected: Mapping[str, float]


COUNTEREXAMPLE_VARIANCES = {"h": 1.0, "v": 1.0, "w1": 1.0, "w2": 1.0, "d": 1.0, "y": 1.0}


@dataclass
class CounterexampleSpec:
    counterexample: CounterexampleName = CounterexampleName.COLLIDER_C5
    theta: float = 1.0
    variances: dict[str, float] = field(default_factory=dict)


def _full_rank_square(rng: np.random.Generator, width: int) -> Matrix:
    for _ in range(MIXING_MAX_RESAMPLES):
        a = rng.standard_normal((width, width))
        if min_singular_value(a) > MIXING_RANK_TOL:
            return a
    raise MixingSeedError("Could not sample a full-rank linear mixing")


def make_counterexample(
    name: CounterexampleName | str,
    n: int = 10_000,
    seed: int = 0,
    theta: float = 1.0,
    variances: Mapping[str, float] | None = None,
) -> Counterexample:
    """Samples one of the counterexample models.

    All four share ``V = H + ε_V`` and ``Y = θD + H + ε_Y`` with univariate exposure; they differ in the
    instrument block and in which functions of the latents play the learned ``(Ŵ, V̂)``. Observed
    instruments are a random full-rank linear map of the latents.

    Args:
        name: Which construction to sample.
        n: Sample size.
        seed: Data seed.
        theta: True effect.
        variances: Overrides for the noise variances, keyed by ``h, v, w1, w2, d, y``.

    Returns:
        The dataset together with the substitutes and the reference quantities.
    """
    name = CounterexampleName(name)
    var = {**COUNTEREXAMPLE_VARIANCES, **(variances or {})}
    unknown = set(var) - set(COUNTEREXAMPLE_VARIANCES)
    if unknown:
        raise ConfigurationError(f"Unknown counterexample variances: {sorted(unknown)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, list(CounterexampleName).index(name)]))

    def _noise(key: str) -> Matrix:
        return math.sqrt(var[key]) * rng.standard_normal((n, 1))

    h = _noise("h")
    v = h + _noise("v")
    w1 = _noise("w1")
    expected: dict[str, float] = {"plim_2sls": theta}
    match name:
        case CounterexampleName.COLLIDER_C5:
            w = w1
            d = v + w + h + _noise("d")
            w_hat, v_hat = w, v + w
            expected["plim_po_2sls"] = theta + 1.0
        case CounterexampleName.EFFICIENCY_LOSS_C4:
            w2 = w1 + _noise("w2")
            w = np.hstack([w1, w2])
            d = v + w1 + w2 + h + _noise("d")
            w_hat, v_hat = w2, np.hstack([v, w1])
            noise_y = var["h"] + var["y"]
            strength = (2.0 * var["w1"] + var["w2"]) ** 2 / (var["w1"] + var["w2"])
            expected["n_var_2sls"] = noise_y / strength
            expected["n_var_po_2sls"] = noise_y / var["w2"]
            # Partialling V also removes the part of H that V explains.
            h_given_v = var["h"] * var["v"] / (var["h"] + var["v"])
            expected["n_var_po_2sls_partialled"] = (h_given_v + var["y"]) / var["w2"]
        case CounterexampleName.INSUFFICIENT_C2 | CounterexampleName.NONIDENT_V_C3:
            w = np.hstack([w1, _noise("w2")])
            d = v + w[:, :1] + w[:, 1:] + h + _noise("d")
            if name == CounterexampleName.INSUFFICIENT_C2:
                w_hat, v_hat = w[:, :1], np.hstack([w[:, 1:], v])
            else:
                w_hat, v_hat = w, v + w[:, :1]
    y = theta * d + h + _noise("y")
    latents = np.hstack([v, w])
    z = latents @ _full_rank_square(rng, latents.shape[1]).T
    dataset = EnvDataset(env=0, split=Split.TRAIN, seed=seed, z=z, d=d, y=y, w=w, v=v, h=h)
    return Counterexample(
        name=name,
        dataset=dataset,
        w_hat=w_hat,
        v_hat=v_hat,
        theta=np.array([[theta]]),
        expected=expected,
    )
