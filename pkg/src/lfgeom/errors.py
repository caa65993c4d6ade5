"""Exception hierarchy shared by every module."""


class GeometryError(Exception):
    """Base class for all lfgeom errors."""


# models
class UnknownModel(GeometryError):
    pass


class InvalidParams(GeometryError):
    pass


class PointOutsideChart(GeometryError):
    pass


class ZeroVector(GeometryError):
    pass


class OutsideValidityCone(GeometryError):
    pass


class OrderExceeded(GeometryError):
    pass


class OracleFailure(GeometryError):
    """A derivative oracle returned a non-finite value."""


# fundamental / connection
class SignatureViolation(GeometryError):
    pass


class SingularMetric(GeometryError):
    pass


class NotCausal(GeometryError):
    pass


class ZeroReference(GeometryError):
    pass


class KnotGridTooCoarse(GeometryError):
    pass


# geodesics / curvature
class LeftChart(GeometryError):
    pass


class LeftValidityCone(GeometryError):
    pass


class StiffFailure(GeometryError):
    pass


class NoConvergence(GeometryError):
    """Shooting did not reach the requested endpoint residual."""


class DegenerateFlag(GeometryError):
    pass


class NotTimelike(GeometryError):
    pass


class LeftTimelikeCone(GeometryError):
    pass


# verify
class EndpointConditionViolated(GeometryError):
    pass


class SamplingExhausted(GeometryError):
    pass


# transport
class InvalidMeasure(GeometryError):
    pass


class BadConfig(GeometryError):
    pass
