"""Exception hierarchy used across the package."""


class TDBoundsError(Exception):
    """Base class for every error raised by tdbounds."""


class DimensionError(TDBoundsError, ValueError):
    """Operand shapes do not agree (non-square input, length mismatch)."""


class ShapeError(TDBoundsError, ValueError):
    """A structural property of a matrix is violated (e.g. asymmetry)."""


class SingularMatrixError(TDBoundsError, ArithmeticError):
    """A linear system is singular or numerically singular."""


class NumericalError(TDBoundsError, ArithmeticError):
    """An iterative kernel failed to converge within its budget."""


class ErgodicityError(TDBoundsError, ValueError):
    """The Markov chain has no unique, strictly positive stationary law."""


class AssumptionError(TDBoundsError, ValueError):
    """A problem violates a modelling assumption (bounded features/rewards,
    positive definiteness of the driving matrix, ...)."""


class DivergenceError(TDBoundsError, ArithmeticError):
    """Iterates blew past the overflow guard."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"iterate diverged at step {step}")


class DomainError(TDBoundsError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class InapplicableError(TDBoundsError, ValueError):
    """A bound cannot be applied to the given problem or parameters."""


class ContractError(TDBoundsError, ValueError):
    """Caller broke an operation contract (missing record, range, ...)."""


class ConfigError(TDBoundsError, ValueError):
    """Configuration is invalid. ``errors`` holds every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
