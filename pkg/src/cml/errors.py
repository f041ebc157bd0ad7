"""Exception types shared across the toolkit."""


class CMLError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(CMLError, ValueError):
    """Invalid map kind, topology, coupling strength or experiment config."""


class DomainError(CMLError, ValueError):
    """A point lies outside the phase space [0, 1]."""


class ConsistencyError(CMLError, ArithmeticError):
    """An internal invariant failed (e.g. an iterate escaped [0, 1])."""


class UsageError(CMLError, ValueError):
    """An operation was called outside its precondition."""


class FeasibilityError(CMLError, ValueError):
    """Iterative-lemma parameters violate one of the admissibility bounds."""


class RuntimeCapExceeded(CMLError, RuntimeError):
    """A component or step cap was hit; ``partial`` holds what was computed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EmptyPlotError(UsageError):
    """A plot was requested for a table without rows."""
