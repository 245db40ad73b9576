"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2,
NumericalError -> 3, SpecificationError -> 4.
"""


class GvcrdError(Exception):
    """Base class for all package errors."""


class ValidationError(GvcrdError):
    """Malformed or inconsistent input data."""


class ParseError(ValidationError):
    """File-level schema violation; carries the offending row when known."""

    def __init__(self, message, path=None, row=None):
        self.path = path
        self.row = row
        loc = ""
        if path is not None:
            loc += f" [{path}"
            loc += f", row {row}]" if row is not None else "]"
        super().__init__(message + loc)


class NumericalError(GvcrdError):
    """A numerical procedure failed (singularity, non-convergence, bad residual)."""


class SpecificationError(GvcrdError):
    """A model specification cannot be estimated (rank, clusters, group structure)."""
