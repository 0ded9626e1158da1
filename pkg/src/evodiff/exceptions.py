"""Exception hierarchy shared by all submodules."""


class EvoDiffError(Exception):
    """Base class for every error raised by the package."""


class DomainError(EvoDiffError, ValueError):
    """An argument lies outside the domain of a schedule, grid or formula."""


class NumericalError(EvoDiffError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DegenerateDirection(EvoDiffError, ValueError):
    """A least-squares direction has (numerically) zero norm."""


class ParseError(EvoDiffError, ValueError):
    """Configuration text is not well formed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class ValidationError(EvoDiffError, ValueError):
    """Configuration or input failed validation.

    ``errors`` is a list of ``(field, reason, line)`` triples so that all
    problems can be reported at once.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [("", errors, None)]
        self.errors = [tuple(e) + (None,) * (3 - len(e)) for e in errors]
        parts = []
        for field, reason, line in self.errors:
            loc = f" (line {line})" if line is not None else ""
            parts.append(f"{field}: {reason}{loc}" if field else f"{reason}{loc}")
        super().__init__("; ".join(parts))

    @property
    def fields(self):
        return [e[0] for e in self.errors]


class FallbackApplied(UserWarning):
    """Non-fatal: a degenerate direction forced a default ζ or η."""
