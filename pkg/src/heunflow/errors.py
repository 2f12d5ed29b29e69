"""Exception types shared across heunflow modules."""


class HeunflowError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(HeunflowError, ValueError):
    pass


class NotScalar(HeunflowError, ValueError):
    pass


class NonFiniteLoss(HeunflowError, FloatingPointError):
    """Loss evaluated to NaN or Inf.

    ``history`` carries the metrics recorded before the failure when raised
    from a training loop.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class NonFiniteState(HeunflowError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class AlphaOutOfRange(HeunflowError, ValueError):
    pass


class AnalyticRequired(HeunflowError, ValueError):
    pass


class DataFormatError(HeunflowError, ValueError):
    """Base for dataset parsing failures."""


class BadMagic(DataFormatError):
    pass


class TruncatedFile(DataFormatError):
    pass


class CountMismatch(DataFormatError):
    pass


class BadRowLength(DataFormatError):
    pass


class BadLabel(DataFormatError):
    pass


class NonFiniteValue(DataFormatError):
    pass


def check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha!r}")
    return float(alpha)
