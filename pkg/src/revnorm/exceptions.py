"""Exception and warning types raised across the package."""


class RevnormError(Exception):
    """Base class for all package errors."""


class DataError(RevnormError):
    """Raised for unreadable or unusable data. Maps to CLI exit code 3."""


class ConfigError(RevnormError):
    """Raised for invalid configuration. Maps to CLI exit code 2."""


class TooFewUsers(DataError):
    pass


class PeriodTooShort(DataError):
    pass


class NoUsableWindows(DataError):
    pass


class DataUnreadable(DataError):
    pass


class MissingContext(RevnormError, ValueError):
    """A normalization strategy was applied without the statistics it needs."""


class ZeroScale(RevnormError, ValueError):
    """An affine scale of zero makes denormalization impossible."""


class EmptyCluster(RevnormError, ValueError):
    pass


class BadKernel(RevnormError, ValueError):
    pass


class ShapeMismatch(RevnormError, ValueError):
    pass


class InconsistentPipeline(ConfigError, ValueError):
    """Loss space and normalization strategy cannot be combined."""


class DimensionMismatch(RevnormError, ValueError):
    pass


class TooFewSamples(RevnormError, ValueError):
    pass


class ConfigInvalid(ConfigError):
    pass


class MissingResults(RevnormError, FileNotFoundError):
    pass


class DegenerateDataWarning(UserWarning):
    """Statistics collapsed (zero spread); epsilon was substituted."""
