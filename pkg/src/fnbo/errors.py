"""Exception types shared across the package."""


class FnboError(Exception):
    """Base class for all package errors."""


class CycleDetected(FnboError):
    pass


class BadOrdering(FnboError):
    """A node lists a parent with an index not strictly smaller than its own."""


class DanglingFinalNode(FnboError):
    """The last node is not the unique sink of the graph."""


class BadInterval(FnboError):
    pass


class NonpositiveCost(FnboError):
    pass


class DomainViolation(FnboError):
    pass


class DimensionMismatch(FnboError):
    pass


class SingularCovariance(FnboError):
    pass


class DuplicateInputs(FnboError):
    pass


class EmptyDiscreteSet(FnboError):
    pass


class ParseError(FnboError):
    pass


class UnknownFunctionKind(FnboError):
    pass
