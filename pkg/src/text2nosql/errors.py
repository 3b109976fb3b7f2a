"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class Text2NoSQLError(Exception):
    """Base class for all package errors."""


# -- parsing ---------------------------------------------------------------


class PositionedError(Text2NoSQLError):
    def __init__(self, position: int, message: str):
        self.position = position
        self.message = message
        super().__init__(f"{message} (at position {position})")


class MalformedFragment(PositionedError):
    """Raised by the tolerant decoder when no reading of the text exists."""


class ParseError(PositionedError):
    """Raised when a query string is not a recognised shell query."""


class UnknownMethod(ParseError):
    def __init__(self, position: int, method: str):
        self.method = method
        super().__init__(position, f"unsupported collection method {method!r}")


class NormalizationConflict(Text2NoSQLError):
    """Two accumulators standardise to the same output name."""


# -- execution -------------------------------------------------------------


class ExecutionError(Text2NoSQLError):
    pass


class UnknownCollection(ExecutionError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"collection {name!r} does not exist")


class UnsupportedOperator(ExecutionError):
    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"unsupported operator {name!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class TypeMismatch(ExecutionError):
    pass


class InvalidQuery(ExecutionError):
    """The query is syntactically fine but semantically rejected (bad stage body)."""


class SchemaError(Text2NoSQLError):
    pass


class DatabaseIoError(Text2NoSQLError):
    pass


# -- transformation --------------------------------------------------------


class CycleError(Text2NoSQLError):
    def __init__(self, cycles: list[list[str]]):
        self.cycles = cycles
        rendered = "; ".join(" -> ".join(c + [c[0]]) for c in cycles)
        super().__init__(f"foreign-key cycles prevent transformation: {rendered}")


class NoMainTable(Text2NoSQLError):
    pass


# -- metrics / orchestration -----------------------------------------------


class MissingDatabase(Text2NoSQLError):
    def __init__(self, db_id: str):
        self.db_id = db_id
        super().__init__(f"no database named {db_id!r}")


class ProviderError(Text2NoSQLError):
    def __init__(self, status: int | None, message: str):
        self.status = status
        self.message = message
        super().__init__(f"provider error ({status}): {message}" if status is not None else message)


class DimensionMismatch(Text2NoSQLError):
    pass


class EmptyLibrary(Text2NoSQLError):
    pass


class NoQueryFound(Text2NoSQLError):
    pass


class GenerationFailed(Text2NoSQLError):
    """The query generator produced nothing usable for an example."""


class ConfigError(Text2NoSQLError):
    """A run configuration file or flag combination is unusable."""
