"""Error types shared across the engine. Exit codes: 1 usage, 2 data, 3 numerical."""


class EngineError(Exception):
    """Base class for all engine errors."""

    exit_code = 2


class UsageError(EngineError):
    """Bad command line or malformed query argument."""

    exit_code = 1


class ParseError(EngineError):
    """Malformed input file; message names the file and 1-based line number."""


class DataError(EngineError):
    """Domain/shape/lookup/coverage violation on otherwise well-formed data."""


class NumericalAbort(EngineError):
    """Non-finite loss or gradient encountered during training."""

    exit_code = 3
