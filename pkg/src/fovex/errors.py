"""Exception types shared across the package."""


class CapabilityError(RuntimeError):
    """A predictor was asked for something it does not support."""


class TransportError(RuntimeError):
    """Communication with an external predictor failed."""


class HandshakeTimeout(TransportError):
    pass


class MalformedMessage(TransportError):
    pass


class ScoreLengthMismatch(TransportError):
    pass


class ConnectionLost(TransportError):
    pass


class RemoteError(TransportError):
    """The predictor endpoint answered with an ``error`` message."""


class UndefinedMetricError(ValueError):
    pass
