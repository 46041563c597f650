"""Exception hierarchy shared by every clansim module."""


class ClansimError(Exception):
    """Base class for all library errors."""


# core
class NonFiniteError(ClansimError, ValueError):
    pass


class SizeMismatch(ClansimError, ValueError):
    pass


class EmptyBlock(ClansimError, ValueError):
    pass


# compressors
class KTooLarge(ClansimError, ValueError):
    pass


class MalformedPayload(ClansimError, ValueError):
    """Raised for any byte-level defect; ``offset`` points at the bad byte when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnknownVersion(MalformedPayload):
    pass


class UnknownCompressorId(MalformedPayload):
    pass


class UnsupportedKind(ClansimError, TypeError):
    pass


class ZeroVector(ClansimError, ValueError):
    pass


class ValueOutOfRange(ClansimError, ValueError):
    """A value cannot be represented in the requested wire precision."""


# protocol / optimizers
class LengthMismatch(ClansimError, ValueError):
    pass


class WorkerCountMismatch(ClansimError, ValueError):
    pass


class ProtocolError(ClansimError, RuntimeError):
    pass


class NonFiniteUpdate(ClansimError, FloatingPointError):
    pass


# analysis
class DegenerateParams(ClansimError, ValueError):
    pass


class NegativeOmega(ClansimError, ValueError):
    pass


class DeltaOutOfRange(ClansimError, ValueError):
    pass


class NonPositiveTime(ClansimError, ValueError):
    pass


class OracleUnavailable(ClansimError, RuntimeError):
    pass


# harness / cli
class ConfigError(ClansimError, ValueError):
    pass
