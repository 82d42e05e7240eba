"""Exception hierarchy shared by every solver in the package."""


class RiskCbfError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(RiskCbfError, ValueError):
    pass


class NoBracket(RiskCbfError, ValueError):
    pass


class NoConvergence(RiskCbfError, RuntimeError):
    pass


class DomainError(RiskCbfError, ValueError):
    pass


class DegenerateCloud(RiskCbfError, ValueError):
    pass


class SolverFailure(RiskCbfError, RuntimeError):
    pass


class InsufficientCalibration(RiskCbfError, ValueError):
    pass


class Unachievable(RiskCbfError, ValueError):
    pass


class EmptyInterior(RiskCbfError, ValueError):
    pass


class Infeasible(RiskCbfError, RuntimeError):
    pass


class CycleDetected(RiskCbfError, RuntimeError):
    pass


class ConfigError(RiskCbfError, ValueError):
    pass
