"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to.
"""


class SimperError(Exception):
    exit_code = 1


class ConfigurationError(SimperError):
    exit_code = 2


class DataError(SimperError):
    exit_code = 3


class InsufficientLengthError(DataError):
    pass


class NumericError(SimperError):
    exit_code = 4


class DimensionError(NumericError):
    pass


class NumericDomainError(NumericError):
    pass


class DegenerateSignalError(NumericError):
    pass


class AliasingError(NumericError):
    pass


class ContractError(NumericError):
    pass


class MetricDomainError(NumericError):
    pass


class TrainingDivergenceError(NumericError):
    pass
