"""Exception types shared by the sym-parameter modules.

Every error carries the process exit code the command-line layer uses when
it reports the failure.
"""


class SymError(Exception):
    """Base class for all errors raised by this project."""

    exit_code = 1


class UsageError(SymError):
    """A call violated its contract (bad arguments, misuse of the tape)."""

    exit_code = 2


class DimensionError(SymError):
    """Operand shapes do not agree."""

    exit_code = 3


class DomainError(SymError):
    """A value lies outside the domain of the operation."""

    exit_code = 3


class FormatError(SymError):
    """A file or document could not be parsed or does not match its schema."""

    exit_code = 3


class NumericalError(SymError):
    """A computation produced a non-finite value."""

    exit_code = 4


class TrainingError(NumericalError):
    """Training diverged; the message names the epoch and batch."""

    def __init__(self, message: str, epoch: int = -1, batch: int = -1):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class EvaluationError(NumericalError):
    """A model could not be evaluated (e.g. NaN parameters)."""
