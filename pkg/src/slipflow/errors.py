"""Exception types raised across the package."""


class SlipflowError(Exception):
    """Base class for all package errors."""


# geometry
class NonPositiveWidth(SlipflowError):
    pass


class DerivativeBoundViolated(SlipflowError):
    pass


class NonMonotoneK(SlipflowError):
    pass


class HorizonTooShort(SlipflowError):
    pass


class QuadratureNotConverged(SlipflowError):
    pass


class DegenerateWindow(SlipflowError):
    pass


class BetaZero(SlipflowError):
    """beta* = 1/(4 beta) is undefined for straight walls."""


class FormulaError(SlipflowError):
    pass


# carrier
class OutsideDomain(SlipflowError):
    pass


class SupportViolation(SlipflowError):
    pass


class ZeroDenominator(SlipflowError):
    pass


# discretization / solvers
class JacobianNonPositive(SlipflowError):
    pass


class RankDeficient(SlipflowError):
    pass


class SingularSystem(SlipflowError):
    pass


class JacobianSingular(SlipflowError):
    pass


class NotConverged(SlipflowError):
    def __init__(self, message, residual=None, report=None):
        super().__init__(message)
        self.residual = residual
        self.report = report


class ContinuationStalled(SlipflowError):
    def __init__(self, message, last_phi=None, reports=None):
        super().__init__(message)
        self.last_phi = last_phi
        self.reports = reports or []


# inequality lab / verifier
class NotStarLike(SlipflowError):
    def __init__(self, message, ray=None):
        super().__init__(message)
        self.ray = ray


class IncompatibleData(SlipflowError):
    pass


class WindowTooShort(SlipflowError):
    pass


class HypothesisViolated(SlipflowError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


# cli
class ConfigInvalid(SlipflowError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
