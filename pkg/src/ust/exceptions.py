"""Exception types raised across the package."""


class UstError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(UstError, ValueError):
    """Input features do not match the model's input dimension."""


class TrainingDivergedError(UstError, FloatingPointError):
    """A training step produced a non-finite loss."""


class CorpusError(UstError):
    """A corpus file could not be parsed into a usable corpus."""


class SplitError(UstError):
    """A class has too few examples for the requested few-shot split."""


class EmptyPoolError(UstError):
    """Selection was asked to draw from an empty candidate pool."""
