"""Exception hierarchy.

Domain errors (bad input, violated preconditions) map to CLI exit code 2,
numeric and optimization failures to exit code 3.
"""


class EvtFluError(Exception):
    exit_code = 2


class DomainError(EvtFluError, ValueError):
    pass


class ParseError(DomainError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderingError(DomainError):
    pass


class ConfigurationError(DomainError):
    pass


class FittingError(DomainError):
    """Not enough data to fit."""


class EstimationError(DomainError):
    pass


class UndefinedScoreError(DomainError):
    pass


class NumericError(EvtFluError, ArithmeticError):
    exit_code = 3


class OptimizationError(NumericError):
    def __init__(self, message, trace=None):
        self.trace = trace or []
        super().__init__(message)


class SeparationError(OptimizationError):
    pass


class CalibrationError(NumericError):
    pass
