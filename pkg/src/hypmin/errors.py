"""Exception hierarchy shared by the hypmin modules."""


class HypminError(Exception):
    """Base class for all library errors."""


# geometry
class NotACorner(HypminError):
    pass


class NotSmooth(HypminError):
    pass


class DegenerateLens(HypminError):
    pass


class BallTooLarge(HypminError):
    pass


class NonConvexDomain(HypminError):
    pass


# cone profile
class SearchExhausted(HypminError):
    pass


class CertificationFailed(HypminError):
    def __init__(self, message, theta=None, value=None):
        super().__init__(message)
        self.theta = theta
        self.value = value


class NoBracket(HypminError):
    pass


class StiffnessFailure(HypminError):
    pass


class InsufficientRange(HypminError):
    pass


class OutsideCone(HypminError):
    pass


# elliptic solver
class NonPositiveValue(HypminError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NewtonStalled(HypminError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class OutOfDomain(HypminError):
    pass


class TooCloseToBoundary(HypminError):
    pass


class NotNested(HypminError):
    pass


# mobius
class AtInfinity(HypminError):
    pass


class BoundaryPoint(HypminError):
    pass


class NotThroughPole(HypminError):
    pass


# asymptotics
class NonPositiveData(HypminError):
    pass


class EmptyDeltaSector(HypminError):
    pass


class DomainsDisagreeNearVertex(HypminError):
    pass


class PreconditionError(HypminError):
    pass


# cli / io
class WriteFailure(HypminError):
    pass
