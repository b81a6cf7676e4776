"""Exception types raised across the package."""


class SiamSearchError(Exception):
    """Base class for all package errors."""


class ZeroNorm(SiamSearchError, ValueError):
    def __init__(self, message="vector norm is below epsilon", row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class DimensionMismatch(SiamSearchError, ValueError):
    pass


class NonPositiveTemperature(SiamSearchError, ValueError):
    pass


class BatchTooSmall(SiamSearchError, ValueError):
    pass


class MissingLabel(SiamSearchError, KeyError):
    pass


class EmptyBank(SiamSearchError, ValueError):
    pass


class IndexOutOfRange(SiamSearchError, IndexError):
    pass


class TooFewSamples(SiamSearchError, ValueError):
    pass


class InfeasibleConfig(SiamSearchError, ValueError):
    pass


class InfeasibleSplit(SiamSearchError, ValueError):
    pass


class InfeasibleGallery(SiamSearchError, ValueError):
    pass


class NoPositives(SiamSearchError, ValueError):
    pass


class ConfigError(SiamSearchError, ValueError):
    pass
