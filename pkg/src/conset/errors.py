"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or inconsistent input data.

    ``rows`` holds the offending (0-based data) row indices when known.
    """

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []


class ConvergenceWarning(UserWarning):
    pass
