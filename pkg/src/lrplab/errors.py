"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class LrpError(Exception):
    """Base class for package errors."""


class ParameterError(LrpError, ValueError):
    """Invalid argument or model parameter (CLI exit code 2)."""


class DivergenceError(ParameterError):
    """A lattice series does not converge for the given exponents."""


class ResourceLimitError(LrpError, RuntimeError):
    """Estimated memory/edge budget exceeded before allocation (exit code 3)."""


class VerificationError(LrpError, AssertionError):
    """A verification suite failed (exit code 4)."""


class FileFormatError(LrpError, OSError):
    """Environment file is corrupt, truncated or incompatible (exit code 5)."""


class SolverError(LrpError, RuntimeError):
    """An iterative linear solve failed to converge."""
