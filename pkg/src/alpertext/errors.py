"""Exception types shared across the package.

The CLI maps these onto exit codes, so each one names a failure class rather
than a module.
"""


class AlpertError(Exception):
    """Base class for package errors."""


class InvalidParameter(AlpertError, ValueError):
    """A numeric argument is outside its admissible range."""


class InvalidScale(InvalidParameter):
    pass


class InvalidExponent(InvalidParameter):
    pass


class ConfigurationError(AlpertError):
    """Mismatched or malformed configuration (truncations, grids, config files)."""


class GeometryError(AlpertError):
    """Requested geometric object does not exist (e.g. no separated triple)."""


class OutOfRange(AlpertError, IndexError):
    """A square or index lies outside the truncation."""


class ResolutionError(AlpertError):
    """Quadrature or lattice resolution is insufficient, or a frequency cap is exceeded."""


class FrameDegenerate(AlpertError):
    """Frame matrix is too ill-conditioned (mollification radius too large)."""


class PreconditionError(AlpertError):
    """An operation was called on an input that violates its precondition."""
