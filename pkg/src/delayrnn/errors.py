"""Exception hierarchy shared across the package."""


class DelayRNNError(Exception):
    """Base class for all package errors."""


class DivergedError(DelayRNNError):
    """A simulated orbit produced a non-finite state."""


class DegenerateSeriesError(DelayRNNError):
    """A series has zero variance where a normalization is required."""


class TooShortError(DelayRNNError):
    """Not enough samples for the requested delay/horizon/split."""


class ShapeMismatchError(DelayRNNError, ValueError):
    pass


class SequenceLengthError(DelayRNNError, ValueError):
    pass


class DivergedTrainingError(DelayRNNError):
    """Training loss became non-finite."""


class InsufficientDataError(DelayRNNError):
    pass


class SingularDelayMapError(DelayRNNError, ZeroDivisionError):
    pass


class ConfigError(DelayRNNError, ValueError):
    """Invalid or unknown configuration key/value."""
