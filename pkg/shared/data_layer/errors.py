"""Exception hierarchy; exit codes are what the CLI returns for each family"""


class StoppingError(Exception):
    """Base error for the toolkit"""
    exit_code = 1


class ConfigError(StoppingError):
    """Model file could not be parsed or does not match the schema"""
    exit_code = 2


class ChainValidationError(StoppingError):
    """A domain invariant was violated"""
    exit_code = 3


class NegativeRate(ChainValidationError):
    pass


class RowSumViolation(ChainValidationError):
    pass


class NegativeStateValue(ChainValidationError):
    pass


class EmptyContinuation(ChainValidationError):
    pass


class NegativeTime(ChainValidationError):
    pass


class NonpositiveRate(ChainValidationError):
    pass


class InvalidParameter(ChainValidationError):
    pass


class StateNotInRegion(ChainValidationError):
    pass


class ParameterOrderViolation(ChainValidationError):
    pass


class FirstOrderNotCritical(ChainValidationError):
    pass


class NotMild(ChainValidationError):
    pass


class TruncationTooNarrow(ChainValidationError):
    pass


class DegenerateThreshold(ChainValidationError):
    pass


class GridTooCoarse(ChainValidationError):
    pass


class EnumerationTooLarge(StoppingError):
    exit_code = 4


class NumericalError(StoppingError):
    exit_code = 5


class ToleranceUnreachable(NumericalError):
    pass


class SeriesDivergence(NumericalError):
    pass
