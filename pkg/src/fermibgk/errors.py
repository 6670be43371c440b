"""Exception hierarchy shared by every module of the package."""


class FermiBGKError(Exception):
    """Base class for all errors raised by fermibgk."""


class DomainError(FermiBGKError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UsageError(FermiBGKError, ValueError):
    """An argument is not one of the supported options."""


class OutOfBranchError(FermiBGKError, ValueError):
    """B is outside (0, beta(-ln 3)), where the inversion is unique."""

    def __init__(self, B, beta_lower):
        self.B = B
        self.beta_lower = beta_lower
        super().__init__(
            f"B={B!r} outside the admissible branch (0, beta(-ln 3)={beta_lower!r})"
        )


class DegenerateMomentsError(FermiBGKError, ValueError):
    """N <= 0 or E - |P|^2/N <= 0: no equilibrium temperature exists."""


class ConvergenceError(FermiBGKError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class SingularFrequencyError(FermiBGKError, ZeroDivisionError):
    """The relaxation frequency law is singular at a = 0."""


class InvariantViolationError(FermiBGKError, ValueError):
    """A state violates 0 <= F <= 1 or contains non-finite values."""

    def __init__(self, message, extremum=None):
        self.extremum = extremum
        super().__init__(message)


class PositivityError(FermiBGKError, ValueError):
    """E0 k - 9 N0^2 / (10 a0) <= 0, so the global equilibrium is unusable."""


class AdmissibilityError(FermiBGKError, RuntimeError):
    """A spatial cell left the admissible set 0 < B < beta(-ln 3).

    ``checkpoint`` holds the last valid state when raised from a time loop.
    """

    def __init__(self, cell, B, beta_lower, checkpoint=None):
        self.cell = cell
        self.B = B
        self.beta_lower = beta_lower
        self.checkpoint = checkpoint
        super().__init__(
            f"cell {cell}: B={B!r} violates 0 < B < beta(-ln 3)={beta_lower!r}"
        )


class ConfigError(FermiBGKError, ValueError):
    """A run configuration is malformed or violates a parameter constraint."""
