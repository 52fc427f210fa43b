"""Autoencoder architectures and the Adam update.

The encoder is ``Linear(d_z, H) → LayerNorm → ReLU → Linear(H, H) → LayerNorm → ReLU → Linear(H, p̂+q̂)``.
The decoder is either a polynomial decoder (monomial features of the latent code followed by one linear
layer) or an MLP decoder ``Linear(p̂+q̂, H) → ReLU → Linear(H, H) → ReLU → Linear(H, d_z)``.

Parameter names follow the position of the layer in those listings, e.g. ``encoder.3.weight``. Linear
weights are stored as ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from inviv import autodiff as ad
from inviv.errors import ShapeError, TrainingDivergenceError
from inviv.numerics import Matrix, monomial_count, monomial_exponents

DEFAULT_HIDDEN = 100
MIN_INPUT_SCALE = 1e-8


class DecoderKind(str, enum.Enum):
    POLYNOMIAL = "polynomial"
    MLP = "mlp"


@dataclass(frozen=True)
class Architecture:
    d_z: int
    p_hat: int
    q_hat: int
    decoder: DecoderKind = DecoderKind.POLYNOMIAL
    degree: int = 1
    hidden: int = DEFAULT_HIDDEN

    @property
    def latent_dim(self) -> int:
        return self.p_hat + self.q_hat

    def linear_layers(self) -> list[tuple[str, int, int]]:
        """Returns ``(prefix, fan_in, fan_out)`` for every linear layer in forward order."""
        h = self.hidden
        layers = [("encoder.0", self.d_z, h), ("encoder.3", h, h), ("encoder.6", h, self.latent_dim)]
        if self.decoder == DecoderKind.POLYNOMIAL:
            layers.append(("decoder.0", monomial_count(self.latent_dim, self.degree), self.d_z))
        else:
            layers += [("decoder.0", self.latent_dim, h), ("decoder.2", h, h), ("decoder.4", h, self.d_z)]
        return layers

    def layer_norms(self) -> list[tuple[str, int]]:
        return [("encoder.1", self.hidden), ("encoder.4", self.hidden)]


def init_params(arch: Architecture, seed: int) -> dict[str, Matrix]:
    """Draws linear weights from ``U(-√(1/fan_in), √(1/fan_in))``; biases 0, LayerNorm gain 1 and bias 0."""
    rng = np.random.default_rng(seed)
    params: dict[str, Matrix] = {}
    for prefix, fan_in, fan_out in arch.linear_layers():
        bound = math.sqrt(1.0 / fan_in)
        params[f"{prefix}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{prefix}.bias"] = np.zeros((1, fan_out))
    for prefix, width in arch.layer_norms():
        params[f"{prefix}.gain"] = np.ones((1, width))
        params[f"{prefix}.bias"] = np.zeros((1, width))
    return params


@dataclass
class AutoencoderModel:
    arch: Architecture
    params: dict[str, Matrix]
    input_mean: Matrix = field(default_factory=lambda: np.zeros((1, 0)))
    input_scale: Matrix = field(default_factory=lambda: np.ones((1, 0)))
    code_mean: Matrix = field(default_factory=lambda: np.zeros((1, 0)))
    code_scale: Matrix = field(default_factory=lambda: np.ones((1, 0)))

    def __post_init__(self) -> None:
        if self.input_mean.size == 0:
            self.input_mean = np.zeros((1, self.arch.d_z))
        if self.input_scale.size == 0:
            self.input_scale = np.ones((1, self.arch.d_z))
        if self.code_mean.size == 0:
            self.code_mean = np.zeros((1, self.arch.latent_dim))
        if self.code_scale.size == 0:
            self.code_scale = np.ones((1, self.arch.latent_dim))

    @property
    def p_hat(self) -> int:
        return self.arch.p_hat

    @property
    def q_hat(self) -> int:
        return self.arch.q_hat

    @property
    def d_z(self) -> int:
        return self.arch.d_z

    def fit_standardization(self, z: Matrix) -> None:
        self.input_mean = z.mean(axis=0, keepdims=True)
        self.input_scale = np.maximum(z.std(axis=0, keepdims=True), MIN_INPUT_SCALE)

    def standardize(self, z: Matrix) -> Matrix:
        if z.shape[1] != self.d_z:
            raise ShapeError(f"Expected {self.d_z} input columns, got {z.shape[1]}")
        return (z - self.input_mean) / self.input_scale

    def fit_code_standardization(self, z: Matrix) -> None:
        """Rescales the reported code of raw inputs ``z`` to zero mean and unit variance per coordinate.

        Training leaves the affine gauge of the code free; this fixes it. Only ``encode`` and ``decode``
        see the rescaling, the training objective works on the raw encoder output.
        """
        latent = raw_code(self, z)
        self.code_mean = latent.mean(axis=0, keepdims=True)
        self.code_scale = np.maximum(latent.std(axis=0, keepdims=True), MIN_INPUT_SCALE)


def build_model(arch: Architecture, seed: int) -> AutoencoderModel:
    return AutoencoderModel(arch=arch, params=init_params(arch, seed))


def bind(model: AutoencoderModel, tape: ad.Tape, trainable: bool = True) -> dict[str, ad.Var]:
    """Places the model parameters on a tape, as named parameters or as constants."""
    if trainable:
        return {name: tape.parameter(value, name=name) for name, value in model.params.items()}
    return {name: tape.constant(value) for name, value in model.params.items()}


def _linear(p: Mapping[str, ad.Var], prefix: str, x: ad.Var) -> ad.Var:
    return ad.add(ad.matmul(x, p[f"{prefix}.weight"]), p[f"{prefix}.bias"])


def encoder_forward(model: AutoencoderModel, p: Mapping[str, ad.Var], z: ad.Var) -> ad.Var:
    """Maps standardized inputs to the latent code of width ``p̂ + q̂``."""
    if z.shape[1] != model.d_z:
        raise ShapeError(f"Encoder expects {model.d_z} input columns, got {z.shape[1]}")
    h = _linear(p, "encoder.0", z)
    h = ad.relu(ad.layer_norm(h, p["encoder.1.gain"], p["encoder.1.bias"]))
    h = _linear(p, "encoder.3", h)
    h = ad.relu(ad.layer_norm(h, p["encoder.4.gain"], p["encoder.4.bias"]))
    return _linear(p, "encoder.6", h)


def decoder_forward(model: AutoencoderModel, p: Mapping[str, ad.Var], latent: ad.Var) -> ad.Var:
    """Maps a latent code back to standardized inputs."""
    arch = model.arch
    if latent.shape[1] != arch.latent_dim:
        raise ShapeError(f"Decoder expects {arch.latent_dim} latent columns, got {latent.shape[1]}")
    if arch.decoder == DecoderKind.POLYNOMIAL:
        features = ad.monomial_map(latent, monomial_exponents(arch.latent_dim, arch.degree))
        return _linear(p, "decoder.0", features)
    h = ad.relu(_linear(p, "decoder.0", latent))
    h = ad.relu(_linear(p, "decoder.2", h))
    return _linear(p, "decoder.4", h)


def split_latent(model: AutoencoderModel, latent: ad.Var) -> tuple[ad.Var, ad.Var]:
    """Splits the code into the invariant slice (first ``p̂`` columns) and the variant slice."""
    return (
        ad.slice_columns(latent, 0, model.p_hat),
        ad.slice_columns(latent, model.p_hat, model.arch.latent_dim),
    )


def raw_code(model: AutoencoderModel, z: Matrix) -> Matrix:
    """The encoder output for raw inputs ``z``, before the code rescaling."""
    tape = ad.Tape()
    p = bind(model, tape, trainable=False)
    return encoder_forward(model, p, tape.constant(model.standardize(z))).value


def encode(model: AutoencoderModel, z: Matrix) -> tuple[Matrix, Matrix]:
    """Returns ``(Ŵ, V̂)`` for raw inputs ``z``."""
    latent = (raw_code(model, z) - model.code_mean) / model.code_scale
    return latent[:, : model.p_hat].copy(), latent[:, model.p_hat :].copy()


def decode(model: AutoencoderModel, latent: Matrix) -> Matrix:
    """Maps a latent code back to the raw input scale."""
    if latent.shape[1] != model.arch.latent_dim:
        raise ShapeError(f"Decoder expects {model.arch.latent_dim} latent columns, got {latent.shape[1]}")
    tape = ad.Tape()
    p = bind(model, tape, trainable=False)
    out = decoder_forward(model, p, tape.constant(latent * model.code_scale + model.code_mean))
    return out.value * model.input_scale + model.input_mean


def reconstruct(model: AutoencoderModel, z: Matrix) -> Matrix:
    w_hat, v_hat = encode(model, z)
    return decode(model, np.hstack([w_hat, v_hat]))


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float | None = 1.0
    step: int = 0
    first_moment: dict[str, Matrix] = field(default_factory=dict)
    second_moment: dict[str, Matrix] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        params: Mapping[str, Matrix],
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        clip_norm: float | None = 1.0,
    ) -> "AdamState":
        state = cls(lr=lr, weight_decay=weight_decay, clip_norm=clip_norm)
        state.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
        state.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
        return state


def global_norm(grads: Mapping[str, Matrix]) -> float:
    return math.sqrt(float(np.sum([np.sum(g * g) for g in grads.values()])))


def clip_global_norm(grads: Mapping[str, Matrix], max_norm: float) -> tuple[dict[str, Matrix], float]:
    """Rescales all gradients jointly so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        return {k: g * factor for k, g in grads.items()}, norm
    return dict(grads), norm


def adam_step(state: AdamState, params: Mapping[str, Matrix], grads: Mapping[str, Matrix]) -> dict[str, Matrix]:
    """One Adam update with global-norm clipping and decoupled weight decay.

    Raises:
        ShapeError: If a gradient does not match its parameter.
        TrainingDivergenceError: If any gradient is non-finite.
    """
    for name, value in params.items():
        if name not in grads or grads[name].shape != value.shape:
            raise ShapeError(f"Gradient for {name} is missing or mis-shaped")
        if not np.all(np.isfinite(grads[name])):
            raise TrainingDivergenceError(state.step + 1, what=f"gradient of {name}")
    clipped = {k: grads[k] for k in params}
    if state.clip_norm is not None:
        clipped, _ = clip_global_norm(clipped, state.clip_norm)

    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    updated: dict[str, Matrix] = {}
    for name, value in params.items():
        g = clipped[name]
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[name], state.second_moment[name] = m, v
        step = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated[name] = value - step - state.lr * state.weight_decay * value
    return updated
