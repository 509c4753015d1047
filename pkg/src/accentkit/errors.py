"""Exception and warning types shared across the package."""


class AccentKitError(Exception):
    """Base class for all toolkit errors."""


# audio
class MalformedHeader(AccentKitError, ValueError):
    pass


class UnsupportedEncoding(AccentKitError, ValueError):
    pass


class EmptyAudio(AccentKitError, ValueError):
    pass


class DecodeFailure(AccentKitError):
    pass


# dsp / io
class SignalTooShort(AccentKitError, ValueError):
    pass


class IoFailure(AccentKitError, OSError):
    pass


# nn / models
class ShapeMismatch(AccentKitError, ValueError):
    pass


class OddSpatialDims(ShapeMismatch):
    pass


class LabelOutOfRange(AccentKitError, ValueError):
    pass


class InvalidConfig(AccentKitError, ValueError):
    pass


class EmptyDataset(AccentKitError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class CheckpointError(AccentKitError, ValueError):
    pass


# metrics
class LengthMismatch(AccentKitError, ValueError):
    pass


class EmptyMatrix(AccentKitError, ValueError):
    pass


class UndefinedRate(AccentKitError, ValueError):
    pass


class NotADistribution(AccentKitError, ValueError):
    pass


# dataset
class MissingColumn(AccentKitError, ValueError):
    def __init__(self, column):
        super().__init__(f"manifest is missing required column {column!r}")
        self.column = column


class EmptyManifest(AccentKitError, ValueError):
    pass


class MalformedRow(AccentKitError, ValueError):
    def __init__(self, row_index, reason):
        super().__init__(f"malformed manifest row {row_index}: {reason}")
        self.row_index = row_index


class ClassAbsent(UserWarning):
    pass


class ClassTooSmall(UserWarning):
    pass


# analysis
class OutOfRange(AccentKitError, ValueError):
    pass


class EmptySegment(AccentKitError, ValueError):
    pass


class ConfigMismatch(AccentKitError, ValueError):
    pass
