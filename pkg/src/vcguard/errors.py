"""Exception hierarchy shared across the package.

The three leaf classes map one-to-one onto the CLI exit codes: bad input is
2, a degenerate statistic is 3, and training divergence is 4.
"""


class VcGuardError(Exception):
    """Base class for all library errors."""


class InputError(VcGuardError, ValueError):
    """Malformed files, incompatible shapes, or out-of-range parameters."""


class DegenerateMetricError(VcGuardError, ArithmeticError):
    """A statistic is undefined on the given data (zero volatility, zero
    variance, or two samples with no variance between them)."""


class DivergenceError(VcGuardError, ArithmeticError):
    """Training loss became non-finite."""
