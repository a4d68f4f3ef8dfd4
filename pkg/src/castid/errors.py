"""Exception types shared by every stage."""


class CastError(Exception):
    """Base class for all pipeline errors."""


class ParseError(CastError, ValueError):
    """A stage file could not be parsed.

    Attributes:
        line: 1-based line number of the offending record, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(CastError, ValueError):
    """A domain invariant was violated (at construction or on load)."""


class ConfigError(CastError, ValueError):
    """Configuration file or override is invalid."""


class UndefinedScoreError(CastError, ValueError):
    """A score is undefined for the given input (e.g. silhouette with < 2 clusters)."""


class MissingEmbeddingError(CastError, KeyError):
    """A proposal has no vector in the embedding set it was looked up in."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing embedding"
