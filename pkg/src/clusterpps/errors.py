"""Exception types shared across the package.

The CLI maps these onto stable exit codes: validation failures exit 2,
numeric failures exit 3, I/O failures exit 4.
"""


class ValidationError(ValueError):
    """Input, design, or precondition violation."""


class NumericError(RuntimeError):
    """Numeric failure (non-convergence, degenerate linear algebra)."""
