"""Exception taxonomy used throughout the package."""


class ReaperDesingError(Exception):
    """Base class for package errors."""


class ValidationError(ReaperDesingError):
    """Configuration violates a geometric precondition (exit code 2 territory)."""


class NoIntersection(ValidationError):
    pass


class Degenerate(ValidationError):
    pass


class Violation(ValidationError):
    """General-position violation; carries the offending pair/triple."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class LostIntersection(ReaperDesingError):
    pass


class OrderingChanged(ReaperDesingError):
    pass


class NotATetrad(ValidationError):
    pass


class NoRoot(ReaperDesingError):
    pass


class MultiRoot(ReaperDesingError):
    pass


class CalibrationFailed(ReaperDesingError):
    pass


class TopologyError(ReaperDesingError):
    pass


class DegenerateMetric(ReaperDesingError):
    pass


class ImmersionFailure(ReaperDesingError):
    pass


class NoConvergence(ReaperDesingError):
    pass


class NoFit(ReaperDesingError):
    pass


class IterationDiverged(ReaperDesingError):
    pass


class SingularBorderedSystem(ReaperDesingError):
    pass


class NoContraction(ReaperDesingError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class LeftTrustRegion(ReaperDesingError):
    pass


class IoError(ReaperDesingError):
    pass
