"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or unknown."""


class TrainingError(RuntimeError):
    """A training step produced a non-finite loss or otherwise failed."""


class GenerationError(RuntimeError):
    """Scripted demonstration or online generation could not complete."""


class GradCheckError(RuntimeError):
    """The finite-difference checker hit a non-finite loss."""


class EpisodeIOError(ValueError):
    """Base class for episode file parse errors."""


class BadMagicError(EpisodeIOError):
    pass


class UnsupportedVersionError(EpisodeIOError):
    pass


class TruncatedFileError(EpisodeIOError):
    pass
