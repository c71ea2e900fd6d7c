"""Exception types shared across the package."""


class ForceFieldError(Exception):
    """Base class for every package-specific error."""


class InvalidInput(ForceFieldError, ValueError):
    """An argument violates a documented precondition."""


class SingularityGuard(ForceFieldError, ValueError):
    """Evaluation was requested inside a singular region, e.g. t below the
    time floor of a 1/t velocity, or a kernel at its own source point."""


class NumericFault(ForceFieldError, ArithmeticError):
    """A computation produced non-finite values.

    May carry a ``diagnostic`` payload (e.g. the network state at the time
    of the fault) to help post-mortems.
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class NonConvergence(ForceFieldError, RuntimeError):
    """An iterative routine exhausted its budget.

    ``partial`` holds whatever partial result was available (for an ODE
    solve, the truncated trajectory record).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateInput(ForceFieldError, ValueError):
    """Statistical input without enough variation, e.g. a zero-variance
    column passed to a z-score normalizer."""


class CsvParseError(ForceFieldError, ValueError):
    """Malformed CSV content.  ``line`` is the 1-based offending line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ForceFieldError, ValueError):
    """All configuration problems found in one pass, aggregated."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
