"""Exception hierarchy shared by every module.

Everything raised deliberately by the package derives from ``ConcordError`` so
the command line can map it onto exit code 2 in one place.
"""


class ConcordError(Exception):
    pass


class DimensionError(ConcordError, ValueError):
    pass


class ConfigError(ConcordError, ValueError):
    pass


class ParseError(ConcordError, ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class StructuralError(ConcordError, ValueError):
    pass


class LabelError(ConcordError, ValueError):
    pass


class EmptySequenceError(ConcordError, ValueError):
    pass


class BatchTooSmallError(ConcordError, ValueError):
    pass


class CacheMismatchError(ConcordError, RuntimeError):
    pass


class EmptyEvaluationError(ConcordError, ValueError):
    pass


class CompatibilityError(ConcordError, ValueError):
    pass


class CheckpointError(ConcordError):
    pass


class BadMagicError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class NumericalError(ConcordError, ArithmeticError):
    """A loss or check produced a non-finite or out-of-tolerance number."""
