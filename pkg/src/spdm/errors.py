"""Exception types shared across the toolkit.

Most errors subclass ValueError so that callers who do not care about the
fine-grained type can treat them as ordinary argument errors.
"""

from __future__ import annotations


class SpdmError(Exception):
    """Base class for all toolkit-specific errors."""


class InvalidParams(SpdmError, ValueError):
    """A constructor or operation received parameters outside its domain."""


class ShapeMismatch(SpdmError, ValueError):
    """An array argument has a shape the group action cannot act on."""


class NonSquareGrid(SpdmError, ValueError):
    """A rotation group was requested on a non-square grid."""


class TimeOutOfRange(SpdmError, ValueError):
    """A time argument lies outside the schedule's [0, T] interval."""


class SingularAtTerminal(SpdmError, ValueError):
    """A bridge quantity was requested too close to the pinned endpoint."""


class DegenerateCoupling(SpdmError, ValueError):
    """An endpoint coupling has zero variance where positive variance is required."""


class UnsupportedSize(SpdmError, ValueError):
    """A tied convolution kernel was requested with an even or too-small size."""


class DivergedLoss(SpdmError, RuntimeError):
    """A training loss became non-finite."""


class NonFiniteState(SpdmError, RuntimeError):
    """A sampler state became NaN or infinite."""


class NonPsd(SpdmError, ValueError):
    """A covariance matrix has eigenvalues below the tolerated negative floor."""


class ConfigError(SpdmError, ValueError):
    """A configuration file failed schema validation."""


class IoError(SpdmError, OSError):
    """A data or tensor file could not be read or written."""
