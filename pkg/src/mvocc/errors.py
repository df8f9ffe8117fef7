"""Exception hierarchy for the multi-view OCC toolkit."""

from typing import Optional


class MvoccError(Exception):
    """Base exception for toolkit errors."""
    pass


class ShapeError(MvoccError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""
    pass


class ArityError(MvoccError, ValueError):
    """An operation received the wrong number of views."""
    pass


class ConvergenceError(MvoccError, ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (off-diagonal residual {residual:.3e})")
        self.residual = residual
        self.message = message

    def __reduce__(self):
        return type(self), (self.message, self.residual)


class NotPSDError(MvoccError, ValueError):
    """A matrix expected to be positive semi-definite has a negative eigenvalue."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"Matrix is not PSD: eigenvalue {eigenvalue:.3e} below -1e-9")
        self.eigenvalue = eigenvalue

    def __reduce__(self):
        return type(self), (self.eigenvalue,)


class NumericalError(MvoccError, ArithmeticError):
    """A public operation produced NaN or Inf entries."""
    pass


class MissingInputError(MvoccError, LookupError):
    """A graph leaf was evaluated before a value was bound to it."""
    pass


class BatchTooSmallError(MvoccError, ValueError):
    """A batch-level measure needs more rows than it was given."""
    pass


class DivergenceError(MvoccError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
        self.message = message

    def __reduce__(self):
        return type(self), (self.message, self.epoch)


class DataError(MvoccError):
    """Dataset content is missing or inconsistent."""
    pass


class DataFormatError(DataError):
    """Dataset files do not follow the manifest/CSV/binary format."""
    pass


class UndefinedMetricError(MvoccError, ValueError):
    """A detection metric needs both classes to be present."""
    pass


class ConfigError(MvoccError, ValueError):
    """Experiment or method configuration is invalid."""

    def __init__(self, message: str, fields: Optional[list] = None):
        super().__init__(message)
        self.fields = fields or []

    def __reduce__(self):
        return type(self), (str(self), self.fields)


class ConditioningWarning(UserWarning):
    """Covariance estimate is close to singular despite regularization."""
    pass
