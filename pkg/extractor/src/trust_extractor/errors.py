class ExtractError(Exception):
    """Base class for extraction failures."""


class ManifestError(ExtractError):
    """Manifest unreadable, malformed, or violating its invariants."""


class EncoderError(ExtractError):
    """Unknown encoder id or unusable input for an encoder."""
