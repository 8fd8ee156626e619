"""Exception hierarchy. Everything raised on bad data or bad models derives
from :class:`DigitRecError` so the CLI can map it to exit code 2."""


class DigitRecError(Exception):
    pass


# audio
class MalformedWav(DigitRecError):
    pass


class UnsupportedEncoding(DigitRecError):
    pass


class EmptySignal(DigitRecError, ValueError):
    pass


class RateMismatch(DigitRecError, ValueError):
    pass


class IoFailure(DigitRecError, OSError):
    pass


# augmentation
class SilentSignal(DigitRecError, ValueError):
    pass


class SilentClean(SilentSignal):
    pass


class SilentNoise(SilentSignal):
    pass


class TransformError(DigitRecError):
    """A transform failed on a specific manifest entry."""

    def __init__(self, entry_path, cause):
        super().__init__(f"{entry_path}: {cause}")
        self.entry_path = entry_path
        self.cause = cause


# features
class TooShort(DigitRecError, ValueError):
    pass


class WrongCoeffCount(DigitRecError, ValueError):
    pass


# neural
class ShapeMismatch(DigitRecError, ValueError):
    pass


class LabelOutOfRange(DigitRecError, ValueError):
    pass


# model persistence
class CorruptCheckpoint(DigitRecError):
    pass


class UnknownVersion(DigitRecError):
    pass


# training
class TooFewSamples(DigitRecError, ValueError):
    pass


class NonFiniteLoss(DigitRecError, FloatingPointError):
    def __init__(self, batch_index, epoch=None):
        where = f"batch {batch_index}" if epoch is None else f"epoch {epoch}, batch {batch_index}"
        super().__init__(f"non-finite loss at {where}")
        self.batch_index = batch_index
        self.epoch = epoch


# data
class NoFilesFound(DigitRecError):
    pass


class UnlabeledFile(DigitRecError):
    def __init__(self, paths):
        listing = "\n  ".join(str(p) for p in paths)
        super().__init__(f"cannot derive a digit label for:\n  {listing}")
        self.paths = list(paths)


class ParseError(DigitRecError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(DigitRecError, ValueError):
    pass


class MalformedFeatureFile(DigitRecError):
    pass
