"""Exception hierarchy shared by all netabs modules."""


class NetAbsError(Exception):
    """Base class for every error raised by netabs."""


class DimensionMismatch(NetAbsError, ValueError):
    pass


class NonSquare(DimensionMismatch):
    pass


class RowMismatch(DimensionMismatch):
    pass


class AsymmetricBeyondTol(NetAbsError, ValueError):
    pass


class Infeasible(NetAbsError):
    """A linear-algebraic construction has no solution within tolerance.

    ``step`` names the construction that failed and ``residual`` records the
    achieved (too large) residual, when one is available.
    """

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class NoCommonLeftInverse(Infeasible):
    pass


class PNotInjective(NetAbsError, ValueError):
    pass


class C2NotInvertible(NetAbsError, ValueError):
    pass


class SingularGram(NetAbsError, ArithmeticError):
    pass


class NonConvergence(NetAbsError):
    """Heuristic solver stopped without a certified point.

    This is *not* a proof of infeasibility.
    """


class NonFiniteState(NetAbsError, ArithmeticError):
    pass


class CertificateInvalid(NetAbsError):
    pass


class NotRestrictedForm(NetAbsError, ValueError):
    pass


class ConditionsNotCertified(NetAbsError):
    pass


class BadDescriptor(NetAbsError, ValueError):
    pass


class ScenarioError(NetAbsError, ValueError):
    pass
