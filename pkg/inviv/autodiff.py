"""Reverse-mode automatic differentiation over matrix operations.

Programs are recorded eagerly onto a :class:`Tape`: every op computes its
forward value immediately and registers a vector-Jacobian product closure.
:func:`backward` walks the tape once in reverse order.

Example::

    tape = Tape()
    w = tape.parameter(np.ones((3, 1)), name="w")
    loss = mean(square(matmul(x, w) - y))
    grads = backward(loss)
    grads["w"]
"""

from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from inviv.errors import ContractError, ShapeError
from inviv.numerics import Matrix, as_matrix, cholesky, monomial_features

Backward = Callable[[Matrix], Sequence[Matrix | None]]

LAYER_NORM_EPS = 1e-5
LOG_DET_EPS = 1e-4

OP_KINDS = (
    "leaf",
    "matmul",
    "add",
    "sub",
    "scalar_mul",
    "elementwise_mul",
    "relu",
    "layer_norm",
    "monomial_map",
    "gram_poly_kernel",
    "trace",
    "mean",
    "sum",
    "square",
    "log_det",
    "transpose",
    "slice_columns",
    "sqrt",
)


@dataclass
class Node:
    kind: str
    parents: tuple[int, ...]
    backward: Backward | None
    requires_grad: bool
    shape: tuple[int, ...]
    name: str | None = None


class Var:
    """A recorded value on a tape."""

    __array_priority__ = 100

    def __init__(self, tape: "Tape", value: Matrix, node_id: int, requires_grad: bool) -> None:
        self.tape = tape
        self.value = value
        self.node_id = node_id
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() requires a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def __add__(self, other: "Var | Matrix | float") -> "Var":
        return add(self, other)

    def __radd__(self, other: "Matrix | float") -> "Var":
        return add(other, self)

    def __sub__(self, other: "Var | Matrix | float") -> "Var":
        return sub(self, other)

    def __rsub__(self, other: "Matrix | float") -> "Var":
        return sub(other, self)

    def __mul__(self, other: "Var | Matrix | float") -> "Var":
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return elementwise_mul(self, other)

    def __rmul__(self, other: "Matrix | float") -> "Var":
        return self.__mul__(other)

    def __matmul__(self, other: "Var | Matrix") -> "Var":
        return matmul(self, other)

    def __rmatmul__(self, other: Matrix) -> "Var":
        return matmul(other, self)

    def __repr__(self) -> str:
        return f"Var(node={self.node_id}, shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations. Single owner; not shareable while recording."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.names: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _leaf(self, value: Matrix, requires_grad: bool, name: str | None) -> Var:
        value = as_matrix(value).copy()
        node_id = len(self.nodes)
        self.nodes.append(
            Node(kind="leaf", parents=(), backward=None, requires_grad=requires_grad, shape=value.shape, name=name)
        )
        if name is not None:
            if name in self.names:
                raise ContractError(f"Duplicate parameter name on tape: {name}")
            self.names[name] = node_id
        return Var(self, value, node_id, requires_grad)

    def parameter(self, value: Matrix, name: str | None = None) -> Var:
        return self._leaf(value, True, name)

    def constant(self, value: Matrix) -> Var:
        return self._leaf(value, False, None)

    def record(self, kind: str, parents: Sequence[Var], value: Matrix, backward_fn: Backward) -> Var:
        """Appends an op node whose value has already been computed."""
        if kind not in OP_KINDS:
            raise ContractError(f"Unknown op kind: {kind}")
        for parent in parents:
            if parent.tape is not self:
                raise ContractError("Cannot mix variables from different tapes")
        requires_grad = any(p.requires_grad for p in parents)
        node_id = len(self.nodes)
        self.nodes.append(
            Node(
                kind=kind,
                parents=tuple(p.node_id for p in parents),
                backward=backward_fn if requires_grad else None,
                requires_grad=requires_grad,
                shape=value.shape,
            )
        )
        return Var(self, value, node_id, requires_grad)


@dataclass(frozen=True)
class GradientTable(Mapping[str, Matrix]):
    """Gradients of every ``requires_grad`` leaf, addressable by name or by variable."""

    by_node: Mapping[int, Matrix]
    names: Mapping[str, int] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Matrix:
        return self.by_node[self.names[key]]

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def wrt(self, var: Var) -> Matrix:
        return self.by_node[var.node_id]


def _tape_of(*operands: "Var | Matrix | float") -> Tape:
    for op in operands:
        if isinstance(op, Var):
            return op.tape
    raise ContractError("At least one operand must be a recorded variable")


def _lift(tape: Tape, x: "Var | Matrix | float") -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(as_matrix(x))


def _unbroadcast(grad: Matrix, shape: tuple[int, ...]) -> Matrix:
    if grad.shape == shape:
        return grad
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Matrix, b: Matrix) -> None:
    for sa, sb in zip(a.shape, b.shape):
        if sa != sb and sa != 1 and sb != 1:
            raise ShapeError(f"{kind} shape mismatch: {a.shape} vs {b.shape}")


def matmul(a: "Var | Matrix", b: "Var | Matrix") -> Var:
    tape = _tape_of(a, b)
    va, vb = _lift(tape, a), _lift(tape, b)
    if va.value.shape[1] != vb.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {va.value.shape} x {vb.value.shape}")
    x, y = va.value, vb.value

    def backward_fn(g: Matrix) -> tuple[Matrix, Matrix]:
        return g @ y.T, x.T @ g

    return tape.record("matmul", (va, vb), x @ y, backward_fn)


def add(a: "Var | Matrix | float", b: "Var | Matrix | float") -> Var:
    tape = _tape_of(a, b)
    va, vb = _lift(tape, a), _lift(tape, b)
    _check_broadcast("add", va.value, vb.value)
    sa, sb = va.value.shape, vb.value.shape

    def backward_fn(g: Matrix) -> tuple[Matrix, Matrix]:
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return tape.record("add", (va, vb), va.value + vb.value, backward_fn)


def sub(a: "Var | Matrix | float", b: "Var | Matrix | float") -> Var:
    tape = _tape_of(a, b)
    va, vb = _lift(tape, a), _lift(tape, b)
    _check_broadcast("sub", va.value, vb.value)
    sa, sb = va.value.shape, vb.value.shape

    def backward_fn(g: Matrix) -> tuple[Matrix, Matrix]:
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return tape.record("sub", (va, vb), va.value - vb.value, backward_fn)


def scalar_mul(a: Var, c: float) -> Var:
    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (g * c,)

    return a.tape.record("scalar_mul", (a,), a.value * c, backward_fn)


def elementwise_mul(a: "Var | Matrix", b: "Var | Matrix") -> Var:
    tape = _tape_of(a, b)
    va, vb = _lift(tape, a), _lift(tape, b)
    _check_broadcast("elementwise_mul", va.value, vb.value)
    x, y = va.value, vb.value

    def backward_fn(g: Matrix) -> tuple[Matrix, Matrix]:
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return tape.record("elementwise_mul", (va, vb), x * y, backward_fn)


def relu(a: Var) -> Var:
    # The subgradient at exactly 0 is taken to be 0.
    mask = (a.value > 0).astype(np.float64)

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (g * mask,)

    return a.tape.record("relu", (a,), a.value * mask, backward_fn)


def layer_norm(x: Var, gain: Var, bias: Var, eps: float = LAYER_NORM_EPS) -> Var:
    """Per-row feature normalization followed by a learnable affine map."""
    width = x.value.shape[1]
    if gain.value.shape != (1, width) or bias.value.shape != (1, width):
        raise ShapeError(f"layer_norm affine parameters must be (1, {width}), got {gain.shape} and {bias.shape}")
    mu = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    gamma = gain.value

    def backward_fn(g: Matrix) -> tuple[Matrix, Matrix, Matrix]:
        dxhat = g * gamma
        dx = inv_std * (
            dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return x.tape.record("layer_norm", (x, gain, bias), xhat * gamma + bias.value, backward_fn)


def monomial_map(x: Var, exponents: np.ndarray) -> Var:
    """Maps each row to the monomials given by an exponent table (see ``numerics.monomial_exponents``)."""
    if x.value.shape[1] != exponents.shape[1]:
        raise ShapeError(f"monomial_map expects width {exponents.shape[1]}, got {x.value.shape[1]}")
    u = x.value

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        dx = np.zeros_like(u)
        for j in range(exponents.shape[1]):
            reduced = exponents.copy()
            reduced[:, j] = np.maximum(reduced[:, j] - 1, 0)
            partial = monomial_features(u, reduced) * exponents[:, j][None, :]
            dx[:, j] = (g * partial).sum(axis=1)
        return (dx,)

    return x.tape.record("monomial_map", (x,), monomial_features(u, exponents), backward_fn)


def gram_poly_kernel(x: "Var | Matrix", y: "Var | Matrix", degree: int, offset: float = 1.0) -> Var:
    """Gram matrix with entries ``(xᵢᵀyⱼ + offset) ** degree``."""
    tape = _tape_of(x, y)
    vx, vy = _lift(tape, x), _lift(tape, y)
    if vx.value.shape[1] != vy.value.shape[1]:
        raise ShapeError(f"gram_poly_kernel width mismatch: {vx.value.shape} vs {vy.value.shape}")
    base = vx.value @ vy.value.T + offset
    xv, yv = vx.value, vy.value

    def backward_fn(g: Matrix) -> tuple[Matrix, Matrix]:
        ds = g * degree * base ** (degree - 1)
        return ds @ yv, ds.T @ xv

    return tape.record("gram_poly_kernel", (vx, vy), base**degree, backward_fn)


def trace(a: Var) -> Var:
    n, m = a.value.shape
    if n != m:
        raise ShapeError(f"trace expects a square matrix, got {a.value.shape}")

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (g[0, 0] * np.eye(n),)

    return a.tape.record("trace", (a,), np.array([[np.trace(a.value)]]), backward_fn)


def mean(a: Var, axis: int | None = None) -> Var:
    shape = a.value.shape
    if axis is None:
        value = np.array([[a.value.mean()]])
        count = a.value.size
    else:
        value = a.value.mean(axis=axis, keepdims=True)
        count = shape[axis]

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (np.broadcast_to(g / count, shape).copy(),)

    return a.tape.record("mean", (a,), value, backward_fn)


def sum(a: Var, axis: int | None = None) -> Var:  # noqa: A001
    shape = a.value.shape
    value = np.array([[a.value.sum()]]) if axis is None else a.value.sum(axis=axis, keepdims=True)

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record("sum", (a,), value, backward_fn)


def square(a: Var) -> Var:
    x = a.value

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (2.0 * x * g,)

    return a.tape.record("square", (a,), x * x, backward_fn)


def sqrt(a: Var) -> Var:
    value = np.sqrt(np.maximum(a.value, 0.0))
    safe = np.where(value > 0, value, 1.0)

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (np.where(value > 0, g / (2.0 * safe), 0.0),)

    return a.tape.record("sqrt", (a,), value, backward_fn)


def transpose(a: Var) -> Var:
    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (g.T,)

    return a.tape.record("transpose", (a,), a.value.T.copy(), backward_fn)


def slice_columns(a: Var, start: int, stop: int) -> Var:
    width = a.value.shape[1]
    if not 0 <= start <= stop <= width:
        raise ShapeError(f"Column slice [{start}:{stop}] out of range for width {width}")

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return a.tape.record("slice_columns", (a,), a.value[:, start:stop].copy(), backward_fn)


def log_det(a: Var, eps: float = LOG_DET_EPS) -> Var:
    """``log det(sym(a) + eps·I)`` through a Cholesky factor; the gradient is the inverse."""
    n, m = a.value.shape
    if n != m:
        raise ShapeError(f"log_det expects a square matrix, got {a.value.shape}")
    sym = 0.5 * (a.value + a.value.T) + eps * np.eye(n)
    factor = cholesky(sym)
    inverse = factor.inverse()
    inverse = 0.5 * (inverse + inverse.T)

    def backward_fn(g: Matrix) -> tuple[Matrix]:
        return (g[0, 0] * inverse,)

    return a.tape.record("log_det", (a,), np.array([[factor.logdet()]]), backward_fn)


def backward(loss: Var) -> GradientTable:
    """Back-propagates from a scalar loss.

    Args:
        loss: A 1x1 variable.

    Returns:
        Gradients for every leaf that requires a gradient.

    Raises:
        ContractError: If the loss is not scalar.
    """
    if loss.value.shape != (1, 1):
        raise ContractError(f"backward() requires a scalar (1x1) loss, got {loss.value.shape}")
    tape = loss.tape
    grads: dict[int, Matrix] = {loss.node_id: np.ones((1, 1))}
    leaves: dict[int, Matrix] = {}

    for node_id in range(loss.node_id, -1, -1):
        node = tape.nodes[node_id]
        if not node.requires_grad or node_id not in grads:
            continue
        g = grads.pop(node_id)
        if node.backward is None:
            leaves[node_id] = g
            continue
        for parent_id, parent_grad in zip(node.parents, node.backward(g)):
            if parent_grad is None or not tape.nodes[parent_id].requires_grad:
                continue
            if parent_id in grads:
                grads[parent_id] = grads[parent_id] + parent_grad
            else:
                grads[parent_id] = parent_grad

    for node_id, node in enumerate(tape.nodes):
        if node.kind == "leaf" and node.requires_grad and node_id not in leaves:
            leaves[node_id] = np.zeros(node.shape)
    return GradientTable(by_node=leaves, names=dict(tape.names))


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.max_rel_error.values())


def grad_check(
    fn: Callable[[Sequence[Var]], Var],
    params: Sequence[Matrix],
    h: float = 1e-6,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compares reverse-mode gradients against central differences.

    The error per entry is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    Args:
        fn: Builds a scalar loss from parameter variables; it is re-run on a fresh tape per evaluation.
        params: Parameter values.
        h: Finite-difference step in ``[1e-7, 1e-3]``.
        tol: Pass threshold on the maximum error.

    Returns:
        The per-parameter maximum error.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"Finite-difference step must lie in [1e-7, 1e-3], got {h}")
    values = [as_matrix(p).copy() for p in params]

    def evaluate(vals: Sequence[Matrix]) -> tuple[Var, list[Var]]:
        tape = Tape()
        pvars = [tape.parameter(v, name=f"p{i}") for i, v in enumerate(vals)]
        return fn(pvars), pvars

    loss, pvars = evaluate(values)
    grads = backward(loss)

    errors: dict[str, float] = {}
    for i, value in enumerate(values):
        analytic = grads.wrt(pvars[i])
        worst = 0.0
        for idx in np.ndindex(value.shape):
            plus = [v.copy() for v in values]
            minus = [v.copy() for v in values]
            plus[i][idx] += h
            minus[i][idx] -= h
            numeric = (evaluate(plus)[0].item() - evaluate(minus)[0].item()) / (2.0 * h)
            a = float(analytic[idx])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
        errors[f"p{i}"] = worst
    return GradCheckReport(max_rel_error=errors, tol=tol)
