"""Exception hierarchy.

Errors split into two families so callers (and the CLI exit codes) can
tell a bad request apart from a numerical breakdown.
"""


class QuasiErgodicError(Exception):
    """Base class for all toolkit errors."""


class PreconditionError(QuasiErgodicError):
    """The inputs violate an operation's preconditions."""


class NumericalError(QuasiErgodicError):
    """A computation broke down or missed its tolerance."""


class InvalidSpec(PreconditionError, ValueError):
    pass


class RateSyntaxError(PreconditionError, ValueError):
    """Malformed rate expression, annotated with its position."""

    def __init__(self, message, source, line, column):
        self.source = source
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}: {source!r}")


class PreconditionFailed(PreconditionError):
    pass


class NotIrreducible(PreconditionError):
    pass


class InsufficientSurvivors(PreconditionError):
    def __init__(self, n_surviving, required):
        self.n_surviving = n_surviving
        self.required = required
        super().__init__(
            f"only {n_surviving} surviving paths, need at least {required}")


class DegenerateRatio(PreconditionError):
    pass


class NumericOverflow(NumericalError, OverflowError):
    pass


class SpectralFailure(NumericalError):
    pass


class ToleranceNotMet(NumericalError):
    """Iteration hit its cap before reaching the requested tolerance.

    The best available estimate is kept on ``best_estimate``.
    """

    def __init__(self, message, best_estimate=None):
        self.best_estimate = best_estimate
        super().__init__(message)


class NotSummable(NumericalError):
    pass


class IdentityViolation(NumericalError):
    pass


class HorizonTooDeep(NumericalError):
    pass


class ExcursionCap(NumericalError):
    pass
