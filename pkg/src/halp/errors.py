"""Exception types shared across the package."""


class HalpError(Exception):
    """Base class for all package errors."""


class DomainError(HalpError, ValueError):
    """A value lies outside the domain of its variable."""


class MisuseError(HalpError, ValueError):
    """An operation was called with arguments it does not support."""


class ValidationError(HalpError, ValueError):
    """A model or basis set failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(HalpError, ValueError):
    """A JSON document could not be parsed into the expected structure."""


class SolverError(HalpError, RuntimeError):
    """The LP engine returned an unexpected status."""


class BudgetExceededError(HalpError, RuntimeError):
    """An iterative procedure hit its budget before converging.

    ``partial`` carries the best result found so far (may be ``None``).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
