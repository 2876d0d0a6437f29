"""Exception hierarchy.

Each family maps onto one CLI exit code: data errors exit 3, numeric and
convergence errors exit 4, configuration errors exit 2.
"""


class CmrlError(Exception):
    exit_code = 1


class ConfigError(CmrlError):
    exit_code = 2


class DataError(CmrlError):
    exit_code = 3


class SchemaViolation(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatch(DataError):
    pass


class AllZeroWeights(DataError):
    pass


class ClassAbsent(DataError):
    pass


class SteppedAfterDone(DataError):
    pass


class NumericError(CmrlError):
    exit_code = 4


class MalformedPmf(NumericError):
    pass


class DegenerateBall(NumericError):
    pass


class NoFiniteGain(NumericError):
    pass


class NonconvergenceGuard(NumericError):
    pass
