"""Exception hierarchy shared by all modules."""


class PlateForgeError(Exception):
    """Base class for every error raised by the toolkit."""


class ParameterError(PlateForgeError, ValueError):
    """Invalid physical or grid parameters."""


class DomainError(PlateForgeError, ValueError):
    """Coordinates outside the plate domain."""


class ShapeError(PlateForgeError, ValueError):
    """Array shape does not match the grid or basis."""


class ConfigurationError(PlateForgeError, ValueError):
    """Inconsistent run configuration (empty split, bad rank, unknown keys, ...)."""


class UnsupportedRegimeError(PlateForgeError):
    """A mode is critically or over-damped; the closed-form oracle does not apply."""


class InstabilityError(PlateForgeError, FloatingPointError):
    """Time integration produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UndefinedMetricError(PlateForgeError, ZeroDivisionError):
    """Relative metric requested against an all-zero ground truth."""


class FormatError(PlateForgeError):
    """Binary file does not carry the expected magic bytes or version."""


class TruncatedPayloadError(FormatError):
    """Payload is shorter than the header announces."""


class DimensionMismatchError(FormatError):
    """Header dimensions disagree with the payload or with the expected grid."""


class PairingError(PlateForgeError):
    """A prediction cannot be matched to its ground-truth trajectory."""


class PredictorError(PlateForgeError):
    """A predictor failed during an autoregressive rollout.

    ``partial`` holds the frames completed before the failure.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
