"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration-style problems exit
with 2, numerical failures with 3.
"""


class ShapeError(ValueError):
    """An input array has the wrong shape or length."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """A config value or combination of settings is invalid."""


class NumericalError(ArithmeticError):
    """Base class for runtime numerical failures."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class UnderflowError(NumericalError):
    """An intermediate quantity underflowed below representable range."""
