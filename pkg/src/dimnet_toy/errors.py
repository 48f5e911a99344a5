"""Exception types shared across the package."""


class DimnetError(Exception):
    pass


class ConfigError(DimnetError, ValueError):
    pass


class ShapeError(DimnetError, ValueError):
    pass


class NumericsError(DimnetError, ArithmeticError):
    pass


class LexiconMiss(DimnetError, KeyError):
    """A coarse token has no lexicon entry."""

    def __init__(self, token):
        super().__init__(token)
        self.token = token

    def __str__(self):
        return f"no lexicon entry for {self.token!r}"


class IndexOutOfRange(DimnetError, IndexError):
    pass


class UnknownToken(DimnetError, KeyError):
    pass


class AllBlank(DimnetError, ValueError):
    """Every frame of a CTC greedy path is blank; there is nothing to regularize."""


class ParseError(DimnetError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CheckpointError(DimnetError, RuntimeError):
    pass


class TrainingDiverged(DimnetError, RuntimeError):
    pass
