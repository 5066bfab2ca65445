"""Exception hierarchy shared across the toolkit."""


class TweetfuseError(Exception):
    """Base class for all toolkit errors."""


class ParseError(TweetfuseError):
    """A file could not be parsed (message names the offending location)."""


class ValidationError(TweetfuseError):
    """Input data violates a documented invariant."""


class ImageError(TweetfuseError):
    """An image could not be loaded or decoded."""

    def __init__(self, ref, reason):
        super().__init__(f"cannot load image {ref!r}: {reason}")
        self.ref = ref


class ConfigError(TweetfuseError):
    """A configuration value is out of its allowed range."""


class InputError(TweetfuseError):
    """An operation received arguments outside its contract."""


class SizeError(InputError):
    """Requested sizes exceed what the data provides."""


class TrainingError(TweetfuseError):
    """Training failed (message names the parameter group when relevant)."""


class DecodeError(TweetfuseError):
    """An encoded id sequence cannot be decoded against the vocabulary."""


class CheckpointError(TweetfuseError):
    """A checkpoint file is corrupt or incomplete."""


class DimensionMismatchError(CheckpointError):
    """A checkpoint does not match the dimensions it is used with."""
