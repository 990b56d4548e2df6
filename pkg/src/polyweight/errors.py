"""Exception hierarchy shared across the package."""


class PolyweightError(Exception):
    """Base class for all errors raised by polyweight."""


class LexiconError(PolyweightError):
    pass


class UnknownCharacterError(LexiconError, KeyError):
    """The target character has no entry in the polyphone lexicon."""

    def __str__(self):
        return Exception.__str__(self)


class DataError(PolyweightError):
    pass


class SupportError(PolyweightError, ValueError):
    """A weighted softmax was asked to normalize over an empty support,
    or the gold label fell outside it."""


class ConfigError(PolyweightError):
    pass


class ArchiveError(PolyweightError):
    pass


class TrainingAborted(PolyweightError):
    """Raised when the loss becomes non-finite during training."""

    def __init__(self, message, iteration=None, batch_ids=None):
        super().__init__(message)
        self.iteration = iteration
        self.batch_ids = list(batch_ids) if batch_ids is not None else []
