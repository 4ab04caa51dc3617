"""Exception types raised across the package.

Every error derives from :class:`MfenkfError`.  Numerical failures that the
CLI maps to exit code 3 additionally derive from :class:`NumericalDivergence`.
"""


class MfenkfError(Exception):
    """Base class for all package errors."""


class ConfigError(MfenkfError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class ShapeMismatch(MfenkfError, ValueError):
    pass


class EmptyEnsemble(MfenkfError, ValueError):
    pass


class InsufficientMembers(MfenkfError, ValueError):
    pass


class InvalidInflation(MfenkfError, ValueError):
    pass


class SingularControlCovariance(MfenkfError, ArithmeticError):
    pass


class SingularSumCovariance(MfenkfError, ArithmeticError):
    pass


class DegenerateVarianceBudget(MfenkfError, ArithmeticError):
    pass


class BasisDegenerate(MfenkfError, ArithmeticError):
    pass


class RankDeficient(MfenkfError, ValueError):
    pass


class NoGeometry(MfenkfError, ValueError):
    pass


class UnsupportedBin(MfenkfError, ValueError):
    pass


class IncompatibleGrids(MfenkfError, ValueError):
    pass


class NumericalDivergence(MfenkfError, ArithmeticError):
    """Base for failures that indicate the numerics diverged."""


class SingularInnovation(NumericalDivergence):
    pass


class IndefiniteCovariance(NumericalDivergence):
    pass


class DivergedAnalysis(NumericalDivergence):
    pass


class StepSizeCollapse(NumericalDivergence):
    pass


class Blowup(NumericalDivergence):
    pass


class ModelBlowUp(NumericalDivergence):
    """A model propagator failed for one or more ensemble members."""

    def __init__(self, members, message=""):
        self.members = list(members)
        super().__init__(message or f"model blow-up in members {self.members}")


class NonSpdTarget(MfenkfError, ValueError):
    """A shrinkage target that is not positive definite."""
