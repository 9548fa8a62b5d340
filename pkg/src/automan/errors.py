"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class AutomanError(Exception):
    """Base class for all package errors."""


class ShapeError(AutomanError, ValueError):
    """An operation received inputs with incompatible shapes."""

    def __init__(self, op: str, shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DataError(AutomanError):
    """Malformed input data, schema, or checkpoint."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)


class NumericError(AutomanError):
    """A computation produced non-finite values."""
