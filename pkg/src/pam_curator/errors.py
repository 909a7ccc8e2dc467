"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ValidationError -> 2, DataError -> 3,
anything else -> 4.
"""


class PamCuratorError(Exception):
    """Base class for all package errors."""


class ValidationError(PamCuratorError):
    """Bad arguments or configuration supplied by the caller."""


class DataError(PamCuratorError):
    """Input data is malformed, missing, or inconsistent."""


class DecodeError(DataError):
    """Audio container could not be decoded.

    Carries the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class UnsupportedFormatError(DecodeError):
    """Container is intact but uses an encoding we do not support."""


class ServiceError(PamCuratorError):
    """Curation-service level failure (no active run, expired lease, ...)."""

    def __init__(self, message: str, code: str = "service_error"):
        super().__init__(message)
        self.code = code
