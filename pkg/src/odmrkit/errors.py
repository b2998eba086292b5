"""Exception types shared across the toolkit.

ValidationError covers bad inputs and guard violations (CLI exit code 2);
NumericalError covers solver faults and internal consistency failures
(CLI exit code 3).
"""


class OdmrkitError(Exception):
    pass


class ValidationError(OdmrkitError):
    pass


class NumericalError(OdmrkitError):
    pass


class FitConvergenceError(NumericalError):
    """Raised when a fit fails to converge; carries the diagnostic report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
