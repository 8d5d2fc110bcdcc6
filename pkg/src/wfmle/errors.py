"""Exception types raised by the samplers and estimators."""


class WFError(Exception):
    """Base class for numerical failures in this package."""


class TimeTooSmall(WFError):
    """A time increment is below the regime where the ancestral series is exact."""


class TruncationBudget(WFError):
    """A mixture truncation could not be certified within its index budget."""


class RejectionBudget(WFError):
    """A rejection sampler exceeded its proposal budget."""


class SeriesNonConvergence(WFError):
    """An alternating series did not reach its decreasing regime within budget."""


class MaxEvaluations(WFError):
    """An optimizer exhausted its evaluation budget."""
