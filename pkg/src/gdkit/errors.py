"""Exception hierarchy shared across the package."""


class GdkitError(Exception):
    """Base class for all gdkit errors."""


class ConfigError(GdkitError, ValueError):
    """Invalid or inconsistent configuration."""


class CorruptDeviationError(GdkitError, ValueError):
    """A deviation blob violates its wire invariants."""


class CorruptInputError(GdkitError, ValueError):
    """Preprocessed data cannot be inverted back into valid samples."""


class MissingBasisError(GdkitError, KeyError):
    """A token references a fingerprint the store cannot resolve."""


class ValidationError(GdkitError, ValueError):
    """A carried payload does not match the fingerprint it claims."""


class FrameError(GdkitError, ValueError):
    """A wire frame is malformed (unknown type, truncation, bad length)."""


class ProtocolError(GdkitError, RuntimeError):
    """A peer violated the session rules (class matrix, sequencing, ...)."""
