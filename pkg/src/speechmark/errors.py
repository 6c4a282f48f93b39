"""Exception hierarchy shared by every stage of the pipeline."""


class SpeechmarkError(Exception):
    """Base class for all errors raised by this package."""


class IngestError(SpeechmarkError):
    """A manifest row points at something that cannot be read."""


class ParseError(SpeechmarkError, ValueError):
    pass


class FormatError(SpeechmarkError, ValueError):
    """Unsupported file encoding or malformed binary artifact."""


class EmptyInputError(SpeechmarkError, ValueError):
    pass


class InputError(SpeechmarkError, ValueError):
    """Bad numerical input: NaNs, shape mismatches, too-short sequences."""


class TrainingError(SpeechmarkError):
    pass


class ScoringError(SpeechmarkError):
    pass


class ConfigurationError(SpeechmarkError, ValueError):
    pass


class ConsistencyError(SpeechmarkError):
    """Artifacts that were produced against different reference models."""


class LeakageError(SpeechmarkError):
    """A held-out recording reached a training stage."""
