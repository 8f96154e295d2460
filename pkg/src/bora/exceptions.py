"""Exception hierarchy shared across the package."""


class BoraError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BoraError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(BoraError, ValueError):
    """An adapter or run configuration violates its invariants."""


class NumericError(BoraError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ConvergenceError(NumericError):
    """An iterative kernel did not converge within its sweep budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateParametersError(NumericError):
    """Parameters sit on a point where the transform is undefined."""


class TrainingError(NumericError):
    """Training diverged; ``step`` names the first bad step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(BoraError, ValueError):
    """A checkpoint or config file is malformed or has the wrong version."""
