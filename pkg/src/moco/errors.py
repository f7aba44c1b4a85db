"""Shared exception types."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse, e.g. running backward twice on one recording."""


class ConfigurationError(ValueError):
    """Unsupported or inconsistent configuration."""


class InfeasibleSolutionError(ValueError):
    """A solution violates a structural constraint of its instance."""


class ContractViolation(ValueError):
    """A documented numeric contract failed at runtime."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class BudgetExceededError(RuntimeError):
    """Requested work exceeds an explicit size or time budget."""


class StateError(RuntimeError):
    """Operation invoked on an object in the wrong state."""
