"""Exception hierarchy shared across the pipeline.

Exit-code mapping lives in the CLI: FormatError and missing files map to 2,
ValidationError to 3, NumericError to 4.
"""


class VleerError(Exception):
    """Base class for all pipeline errors."""


class FormatError(VleerError):
    """A file does not conform to its declared on-disk format."""


class ValidationError(VleerError):
    """An in-memory object violates a type invariant."""


class NumericError(VleerError):
    """A numeric failure (NaN loss, degenerate input) aborted a stage."""
