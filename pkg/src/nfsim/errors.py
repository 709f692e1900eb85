"""Exception types shared across the package."""


class NfsimError(Exception):
    """Base class for all package-specific errors."""


class DegenerateDistribution(NfsimError, ValueError):
    """Raised when a vector cannot be normalized into a distribution."""


class ShapeError(NfsimError, ValueError):
    """Raised when array shapes are inconsistent."""


class InvalidInput(NfsimError, ValueError):
    """Raised on non-finite or otherwise malformed numeric input."""


class InvalidObservation(NfsimError, ValueError):
    """Raised when an observation index is outside the modality's range."""


class DegenerateState(NfsimError, ValueError):
    """Raised when a physiological state produces an undefined quantity."""


class ConfigError(NfsimError, ValueError):
    """Raised on invalid or inconsistent experiment configuration."""
