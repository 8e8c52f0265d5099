"""Exception hierarchy shared by every v2s_lab module."""


class V2SError(Exception):
    """Base class for all library errors."""


class ShapeError(V2SError, ValueError):
    pass


class ValidationError(V2SError, ValueError):
    pass


class InsufficientDataError(ValidationError):
    pass


class ContractError(V2SError, RuntimeError):
    """A caller broke an API contract (stale cache, frozen model, ...)."""


class DivergedError(V2SError, ArithmeticError):
    def __init__(self, stage: str, epoch: int, value: float):
        super().__init__(f"{stage}: non-finite loss {value!r} at epoch {epoch}")
        self.stage = stage
        self.epoch = epoch
        self.value = value


class FormatError(V2SError, ValueError):
    """Malformed on-disk artifact."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncationError(FormatError):
    def __init__(self, what: str, expected: int, actual: int):
        super().__init__(f"truncated {what}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class ChecksumError(FormatError):
    pass
