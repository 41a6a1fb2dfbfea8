"""Exception types shared across the package."""


class CpkError(Exception):
    """Base class for all package errors."""


class InvalidState(CpkError):
    pass


class HorizonExceeded(CpkError):
    pass


class ImproperPolicy(CpkError):
    """The policy-induced chain does not reach the absorbing set with probability 1."""


class EmptyBatch(CpkError):
    pass


class DimensionMismatch(CpkError):
    pass


class EmptyThresholds(CpkError):
    pass


class SingleClass(CpkError):
    pass


class UnknownLabel(CpkError):
    pass


class Infeasible(CpkError):
    pass


class Unbounded(CpkError):
    pass


class NumericalFailure(CpkError):
    pass


class NotOptimal(CpkError):
    pass


class SolverError(CpkError):
    pass


class TooLarge(CpkError):
    pass


class NoCoverage(CpkError):
    pass
