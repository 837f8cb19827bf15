"""Exception types shared across the package."""


class DeragError(Exception):
    """Base class for all package errors."""


class CorpusFormatError(DeragError):
    """Malformed corpus file; message names the offending line."""


class MatrixFormatError(DeragError):
    """Malformed binary embedding matrix or sidecar."""


class DegenerateInputError(DeragError):
    """Numerically degenerate input (zero vector, constant series, ...)."""


class TransportError(DeragError):
    """Encoder service unreachable after retries."""


class ProtocolError(DeragError):
    """Encoder service replied with an inconsistent or malformed payload."""
