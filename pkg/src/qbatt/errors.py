"""Exception hierarchy shared by every qbatt module."""


class QBattError(Exception):
    """Base class for all qbatt errors."""


class InvalidDimensionError(QBattError, ValueError):
    """Operator or layout dimensions do not agree."""


class DomainError(QBattError, ValueError):
    """An argument lies outside the domain of an operation."""


class TruncationError(QBattError, ValueError):
    """A requested Fock occupation does not fit inside the cutoff."""


class NumericalCorruptionError(QBattError, ArithmeticError):
    """A quantity that must be real (or Hermitian) is not, beyond tolerance."""


class InsufficientDataError(QBattError, ValueError):
    """Not enough samples to evaluate a trajectory statistic."""


class IntegrationError(QBattError, RuntimeError):
    """Adaptive step size underflowed.

    The last accepted state is kept on ``last_state`` together with its time
    ``last_time`` so callers can inspect or resume the run.
    """

    def __init__(self, message, last_time=None, last_state=None, record=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state
        self.record = record


class ConfigError(QBattError, ValueError):
    """Invalid scenario configuration; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class FileError(QBattError, OSError):
    """Writing an output artifact failed."""
