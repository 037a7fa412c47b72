"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit code 2);
``NumericalBudgetError`` subclasses signal that a numerical budget or
tolerance was exhausted (CLI exit code 3).
"""


class BilliardMMEError(Exception):
    pass


class ValidationError(BilliardMMEError, ValueError):
    pass


class NumericalBudgetError(BilliardMMEError, RuntimeError):
    pass


# table geometry
class EmptyTable(ValidationError):
    pass


class OverlappingScatterers(ValidationError):
    pass


class HorizonNotCertified(ValidationError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class IndexOutOfRange(ValidationError, IndexError):
    pass


class ParseError(ValidationError):
    def __init__(self, msg, lineno=None):
        if lineno is not None:
            msg = f"line {lineno}: {msg}"
        super().__init__(msg)
        self.lineno = lineno


# billiard map
class FlightBudgetExceeded(NumericalBudgetError):
    pass


class NumericalTangency(NumericalBudgetError):
    pass


class GrazingDerivative(NumericalBudgetError):
    def __init__(self, msg, scale=None):
        super().__init__(msg)
        self.scale = scale


class OrbitError(NumericalBudgetError):
    def __init__(self, msg, index, cause=None):
        super().__init__(msg)
        self.index = index
        self.cause = cause


# curve dynamics / estimators
class RefinementBudgetExceeded(NumericalBudgetError):
    def __init__(self, msg, interval=None):
        super().__init__(msg)
        self.interval = interval


class InsufficientData(ValidationError):
    pass


class InsufficientGrowth(NumericalBudgetError):
    pass


class BudgetExhausted(NumericalBudgetError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class ResolutionWarning(UserWarning):
    pass


# renewal shift / operator
class NoSolution(ValidationError):
    pass


class DegenerateSpec(ValidationError):
    pass


class InfiniteS(ValidationError):
    pass


class TruncationTooCoarse(NumericalBudgetError):
    pass


class TruncationLeak(NumericalBudgetError):
    pass


# statistics
class NonCentered(ValidationError):
    pass


class InsufficientSamples(NumericalBudgetError):
    pass


class ZeroVariance(ValidationError):
    pass
