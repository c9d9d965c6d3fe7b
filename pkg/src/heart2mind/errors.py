"""Shared exception types.

Every domain failure raises a subclass of Heart2MindError so callers (CLI,
HTTP layer) can map errors to exit codes / status codes in one place.
"""


class Heart2MindError(Exception):
    """Base class for all domain errors."""


class ConfigError(Heart2MindError):
    """Invalid or missing configuration (bad hyperparameters, missing key env var)."""


class NotFoundError(Heart2MindError):
    """Unknown session / case / file."""


class StateError(Heart2MindError):
    """Operation not legal in the current lifecycle state."""


class ContractError(Heart2MindError):
    """Caller violated an operation precondition."""


class ShapeError(ContractError):
    """Tensor shape mismatch."""


class DegenerateSeriesError(ContractError):
    """Constant series where variance > 0 is required."""


class InsufficientDataError(ContractError):
    """Series shorter than the minimum the operation needs."""


class ParseError(Heart2MindError):
    """Malformed input; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ChecksumError(Heart2MindError):
    """Checkpoint payload does not match its manifest checksum."""


class UnsupportedVersionError(Heart2MindError):
    """Checkpoint format version this build cannot read."""


class NumericsError(Heart2MindError):
    """NaN/Inf produced by a tensor op while checks are enabled."""


class AuthenticationError(Heart2MindError):
    """Encrypted payload failed authentication (wrong key or tampering)."""


class TransportError(Heart2MindError):
    """Endpoint unreachable after retries."""


class EndpointError(Heart2MindError):
    """Endpoint reachable but returned a non-2xx or malformed response."""
