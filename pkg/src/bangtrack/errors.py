"""Exception types shared across the package."""


class BangtrackError(Exception):
    """Base class for all package-specific errors."""


class OrderViolation(BangtrackError):
    """Switching times would not remain strictly increasing (or left their
    allowed window). Signals that a correction or insertion is not
    physically acceptable."""


class IntegrationBlowup(BangtrackError):
    """A propagated state became non-finite."""


class NoFreedomLeft(BangtrackError):
    """No switching times remain after the requested time; the backward
    differential is undefined and no correction can be computed."""


class AllSingularValuesZero(BangtrackError):
    """Every singular value of the matrix fell below the rank tolerance."""


class NotConverged(BangtrackError):
    """The timing optimization failed to reach feasibility tolerance.

    Carries the best iterate found so that callers can still inspect it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NoFeasibleNominal(BangtrackError):
    """No candidate structure produced a feasible nominal control."""


class ConfigError(BangtrackError):
    """Experiment configuration is missing, malformed, or fails schema
    validation."""
