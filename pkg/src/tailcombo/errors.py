"""Exception hierarchy.

Every error carries the process exit code the CLI reports for it.
"""


class TailComboError(Exception):
    exit_code = 1


class ConfigError(TailComboError):
    exit_code = 2


class DataError(TailComboError):
    exit_code = 3


class DesignError(DataError):
    """Singular, duplicated or over-correlated design columns."""


class NumericError(TailComboError):
    exit_code = 4


class DomainError(NumericError, ValueError):
    """Argument outside the domain of a transform."""


class FitError(NumericError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class EstimationError(NumericError):
    pass


class ConstraintError(NumericError):
    pass


class OptimizationError(NumericError):
    pass


class BootstrapError(NumericError):
    pass


class SearchError(TailComboError):
    exit_code = 5
