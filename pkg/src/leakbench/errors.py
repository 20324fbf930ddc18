"""Exception hierarchy. Each top-level class maps to one CLI exit code."""


class LeakBenchError(Exception):
    exit_code = 1


class ConfigError(LeakBenchError, ValueError):
    exit_code = 2


class DataError(LeakBenchError, ValueError):
    exit_code = 3


class ManifestError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FeatureFileError(DataError):
    pass


class PlanMismatchError(DataError):
    pass


class ProtocolError(LeakBenchError):
    exit_code = 4


class UndefinedCorrelationError(LeakBenchError, ValueError):
    """Raised when a correlation is requested for a constant input."""


class DivergenceError(LeakBenchError, ArithmeticError):
    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at iteration {iteration}")
