"""Exception hierarchy shared across the package.

The CLI maps every TrustError to exit code 1 with a machine-readable
diagnostic; anything else is a bug.
"""


class TrustError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TrustError):
    """Operands have incompatible or invalid shapes."""


class NonFiniteError(TrustError):
    """A value that must be finite contains NaN or Inf."""


class FormatError(TrustError):
    """An on-disk artifact violates the binary or manifest format."""


class DatasetError(TrustError):
    """A dataset violates a semantic invariant (row counts, label range...)."""


class ConfigError(TrustError):
    """Invalid configuration values or flag combinations."""


class DivergenceError(TrustError):
    """Training produced a non-finite loss and was aborted."""
