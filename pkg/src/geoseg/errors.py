"""Exception taxonomy shared across the package."""


class GeosegError(Exception):
    """Base class for all package-specific errors."""


class CodecError(GeosegError, ValueError):
    """Raised when an RLE payload is inconsistent with its declared size."""


class GroundingParseError(GeosegError, ValueError):
    """Raised when no bounding box can be recovered from grounder output."""


class GroundingDegenerateError(GeosegError, ValueError):
    """Raised when a box collapses to zero width or height after clamping."""


class BackendUnavailableError(GeosegError, RuntimeError):
    """Raised when a backend stays unreachable after the configured retries."""


class ProtocolError(GeosegError, RuntimeError):
    """Raised when a backend response does not match the wire schema."""


class StubMissError(GeosegError, KeyError):
    """Raised by the scripted stub for an image digest no fixture covers."""


class JudgeParseError(GeosegError, ValueError):
    """Raised when judge output lacks the four scores or violates the 1-5 range."""


class ManifestError(GeosegError, ValueError):
    """Raised on malformed benchmark manifests; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CompositionError(GeosegError, ValueError):
    """Raised when strict-mode composition checks fail on a manifest."""
