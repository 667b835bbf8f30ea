"""Exception hierarchy shared by the whole package."""


class OseledetsError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteInput(OseledetsError, ValueError):
    pass


class DimensionMismatch(OseledetsError, ValueError):
    pass


class NotTransverse(OseledetsError, ValueError):
    pass


class DegenerateIntersection(OseledetsError, ValueError):
    pass


class NonFiniteMatrix(OseledetsError, FloatingPointError):
    pass


class UnknownSystem(OseledetsError, KeyError):
    pass


class BadParams(OseledetsError, ValueError):
    pass


class ClusterAmbiguity(OseledetsError):
    """Finite-time exponents sit too close to the clustering threshold.

    Usually fixed by increasing the horizon.
    """


class DimensionCollapse(OseledetsError):
    """An Oseledets space came out with the wrong dimension."""


class SignDefect(OseledetsError):
    pass


class SingularRestriction(OseledetsError):
    pass


class GapTooSmall(OseledetsError, ValueError):
    pass


class NoSuchN(OseledetsError):
    pass


class NotHyperbolic(OseledetsError):
    pass


class TooFewPairs(OseledetsError):
    pass


class ZeroDistances(OseledetsError):
    """Raised only on request; by default the estimate is flagged instead."""


class BadRates(OseledetsError, ValueError):
    pass


class PairTooFar(OseledetsError):
    pass


class HypothesisFail(OseledetsError):
    pass


class Unreachable(OseledetsError):
    pass
