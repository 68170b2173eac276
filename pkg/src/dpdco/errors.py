"""Exception hierarchy shared across the package."""


class DPDCOError(Exception):
    """Base class for all library errors."""


class ConfigError(DPDCOError):
    """Malformed or inconsistent configuration."""


class InfeasibleSpec(DPDCOError):
    """A charging spec whose caps cannot deliver the requested energy."""


class DimensionMismatch(DPDCOError):
    pass


class NonPositiveCount(DPDCOError):
    pass


class InfeasibleSet(DPDCOError):
    """Budget outside ``[0, sum(a)]`` for a box-budget set."""


class NonFiniteInput(DPDCOError):
    pass


class TooLarge(DPDCOError):
    """Brute-force enumeration requested for a dimension it cannot handle."""


class BadK(DPDCOError):
    pass


class NonPositiveParam(DPDCOError):
    pass


class IndexOutOfRange(DPDCOError):
    pass


class InconsistentSchedule(DPDCOError):
    """Noise schedule built for a different (K, L) than the run uses."""


class ProjectionFailure(DPDCOError):
    pass


class NonPositiveReference(DPDCOError):
    pass


class NoConvergence(DPDCOError):
    pass


class FeasibilityResampleExhausted(DPDCOError):
    pass


class BadCSV(DPDCOError):
    pass


class UnknownSource(DPDCOError):
    pass


class DegenerateInstance(DPDCOError):
    """Strict complementarity fails near the instance, so derivatives are one-sided."""


class BoundViolation(DPDCOError):
    """A measured sensitivity exceeded its theoretical bound."""
