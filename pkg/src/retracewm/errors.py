"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with arguments that violate its contract."""


class NumericError(ArithmeticError):
    """A non-finite value (NaN/Inf) appeared during computation."""


class NotReadyError(RuntimeError):
    """Retryable signal: a resource (e.g. the replay buffer) has too little data."""
