"""Exception hierarchy shared by every pipeline stage.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`InvariantError` -> 3.
"""


class NeuropipeError(Exception):
    """Base class for all package errors."""


class DataError(NeuropipeError, ValueError):
    """Input data or configuration is malformed or inconsistent."""


class ParseError(DataError):
    """A delimited file could not be parsed.

    Carries the 1-based ``line`` and ``column`` of the offending cell when
    they are known.
    """

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = [str(path)] if path is not None else []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(": ".join(where + [message]))


class InvariantError(NeuropipeError, RuntimeError):
    """An internal contract was violated (e.g. a leakage-guard failure)."""


class LeakageError(InvariantError):
    """A fit call saw subject ids that belong to a held-out split."""

    def __init__(self, violations):
        self.violations = list(violations)
        stages = sorted({v.stage for v in self.violations})
        super().__init__(
            f"leakage guard: {len(self.violations)} violation(s) in stage(s) {', '.join(stages)}"
        )
