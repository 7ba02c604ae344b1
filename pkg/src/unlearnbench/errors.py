"""Exception hierarchy shared by every module in the package."""


class UnlearnBenchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UnlearnBenchError, ValueError):
    """Invalid configuration: bad dims, counts, learning rates, method ids."""


class InputShapeError(UnlearnBenchError, ValueError):
    pass


class LabelError(UnlearnBenchError, ValueError):
    pass


class EmptyBatchError(UnlearnBenchError, ValueError):
    pass


class NumericOverflowError(UnlearnBenchError, ArithmeticError):
    """Raised when an update produces non-finite parameters or inputs."""

    def __init__(self, message, context=None):
        super().__init__(message if context is None else f"{context}: {message}")
        self.context = context


class TrainingDivergedError(NumericOverflowError):
    def __init__(self, epoch, batch, context=None):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}", context)
        self.epoch = epoch
        self.batch = batch


class InfeasibleForgetRequest(UnlearnBenchError):
    def __init__(self, message, closest_fraction=None):
        super().__init__(message)
        self.closest_fraction = closest_fraction


class ConsistencyError(UnlearnBenchError, ValueError):
    pass


class InsufficientDataError(UnlearnBenchError, ValueError):
    pass


class TimingError(UnlearnBenchError, ValueError):
    pass
