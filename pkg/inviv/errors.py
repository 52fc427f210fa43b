"""Defines the exception hierarchy used throughout the package."""


class InvivError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(InvivError, ValueError):
    """Raised when operand dimensions do not conform."""


class ContractError(InvivError, ValueError):
    """Raised when a documented precondition of an operation is violated."""


class ConfigurationError(InvivError, ValueError):
    """Raised for invalid configurations or builtin aliases."""


class MixingSeedError(ConfigurationError):
    """Raised when a mixing seed repeatedly produces a rank-deficient coefficient matrix."""


class NumericalError(InvivError, ArithmeticError):
    """Raised when a numerical routine cannot produce a finite answer."""


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, pivot_index: int, pivot: float) -> None:
        super().__init__(f"{message} (pivot {pivot_index} = {pivot:.3e})")
        self.pivot_index = pivot_index
        self.pivot = pivot


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, pivot_index: int, pivot: float) -> None:
        super().__init__(f"Matrix is not positive definite: pivot {pivot_index} = {pivot:.3e}")
        self.pivot_index = pivot_index
        self.pivot = pivot


class WeakInstrumentError(NumericalError):
    def __init__(self, min_singular_value: float, threshold: float) -> None:
        super().__init__(
            f"Instrument cross-moment is rank deficient or weak: min singular value "
            f"{min_singular_value:.3e} <= {threshold:.1e}"
        )
        self.min_singular_value = min_singular_value
        self.threshold = threshold


class TrainingDivergenceError(NumericalError):
    def __init__(self, step: int, what: str = "loss") -> None:
        super().__init__(f"Training diverged at step {step}: non-finite {what}")
        self.step = step


class ExperimentError(InvivError, RuntimeError):
    """Raised when too many tasks of a sweep or experiment fail."""
