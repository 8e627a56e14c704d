"""Exception hierarchy.

Errors are grouped by what went wrong so the command-line front end can map
them to exit codes: :class:`DataError` for bad input, :class:`NumericalError`
for solver or simulation failures.
"""

from __future__ import annotations


class CommonBreakError(Exception):
    """Base class for every error raised by the package."""


class DataError(CommonBreakError, ValueError):
    """Input data or arguments violate a documented precondition."""


class NumericalError(CommonBreakError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class NonFinite(DataError):
    """A panel cell or covariate is NaN or infinite."""


class EmptyWindow(DataError):
    """The trimming fraction leaves no admissible break index."""


class PanelParseError(DataError):
    """A CSV file could not be parsed into a panel."""


class OutOfSupport(DataError):
    """An observation is impossible under the model family."""


class LagTooLarge(DataError):
    """Requested autocovariance lag does not fit inside the trimmed pre-break segment."""


class ZeroSignal(DataError):
    """Estimated segment parameters coincide, so signal-weighted ratios are undefined."""


class UnknownFamily(DataError):
    """No model family is registered under the requested name."""


class DegenerateSegment(NumericalError):
    """A segment does not identify the family parameters."""


class NoConvergence(NumericalError):
    """The Newton solver hit its iteration cap."""

    def __init__(self, message: str, series: int | None = None, b_index: int | None = None):
        super().__init__(message)
        self.series = series
        self.b_index = b_index


class KernelNotPD(NumericalError):
    """A Toeplitz covariance could not be factorized even after eigenvalue flooring."""


class CovNotPSD(NumericalError):
    """A grid covariance is not positive semidefinite after flooring."""


class TailNotSummable(NumericalError):
    """Linear-process coefficients do not reach the tail tolerance within the cap."""


class HorizonOverflow(NumericalError):
    """The argmax kept escaping the simulation horizon after the maximum number of doublings."""
