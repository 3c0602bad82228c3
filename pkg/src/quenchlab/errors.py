"""Exception hierarchy shared by all quenchlab modules."""


class QuenchlabError(Exception):
    """Base class for every error raised by quenchlab."""


class InvalidParameterError(QuenchlabError, ValueError):
    pass


class DimensionMismatchError(QuenchlabError, ValueError):
    pass


class NumericalDivergenceError(QuenchlabError, ArithmeticError):
    """Non-finite values appeared during an update.

    ``stamp`` is the step index or iteration at which it happened, ``time`` the
    corresponding physical time when that differs from the step count.
    """

    def __init__(self, message, stamp=None, time=None):
        super().__init__(message)
        self.stamp = stamp
        self.time = time


class ConfigError(QuenchlabError, ValueError):
    pass


class SchemaError(QuenchlabError, ValueError):
    def __init__(self, message, path=None, row=None):
        super().__init__(message)
        self.path = path
        self.row = row

    def __str__(self):
        where = "" if self.path is None else f"{self.path}"
        if self.row is not None:
            where += f" row {self.row}"
        base = super().__str__()
        return f"{where.strip()}: {base}" if where else base


class IdxFormatError(QuenchlabError, OSError):
    """Malformed IDX file. Carries the offending path and byte offset."""

    def __init__(self, message, path=None, offset=None):
        super().__init__(message)
        self.path = path
        self.offset = offset

    def __str__(self):
        return f"{self.args[0]} (file={self.path}, offset={self.offset})"


class IdxBadMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass
