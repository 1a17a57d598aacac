"""Exception hierarchy shared by all chargesite modules."""


class ChargeSiteError(Exception):
    """Base class for every error raised by chargesite."""


class ConfigError(ChargeSiteError):
    pass


class UnknownNode(ChargeSiteError, KeyError):
    pass


class NoPath(ChargeSiteError):
    pass


class DomainError(ChargeSiteError, ValueError):
    pass


class EmptyNest(DomainError):
    pass


class DimensionMismatch(ChargeSiteError, ValueError):
    pass


class SolverError(ChargeSiteError):
    """A numerical solver failed; mapped to exit code 3 by the CLI."""


class SingularBranch(SolverError, ValueError):
    pass


class NonConvergence(SolverError):
    pass


class QLimitViolation(SolverError):
    pass


class Unbounded(SolverError):
    pass


class SampleFailure(SolverError):
    pass


class Infeasible(ChargeSiteError):
    """No placement policy satisfies the QoS constraints.

    ``nearest`` holds the policy with the smallest constraint violation and
    ``violation`` its magnitude, when a diagnostic is available.
    """

    def __init__(self, message, nearest=None, violation=None, stage=None):
        super().__init__(message)
        self.nearest = nearest
        self.violation = violation
        self.stage = stage
