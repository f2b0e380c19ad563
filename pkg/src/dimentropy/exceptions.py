"""Exception hierarchy shared by every module of the package."""


class DimentropyError(Exception):
    """Base class for all errors raised by this package."""


class SingularPoint(DimentropyError):
    """A point lies on (or within tolerance of) the singular set."""


class OutOfDomain(DimentropyError):
    """A point is not contained in any chart of the system."""


class NoBranchRule(DimentropyError):
    """The system does not provide inverse branches."""


class RootFindingFailure(DimentropyError):
    """Simultaneous root iteration did not reach the residual target."""


class EmptySet(DimentropyError):
    pass


class SingularOrbit(DimentropyError):
    """An orbit iterate landed within tolerance of the singular set."""


class DegenerateJacobian(DimentropyError):
    pass


class TooShort(DimentropyError):
    pass


class NoGap(DimentropyError):
    """Lyapunov blocks could not be separated at the available resolution."""


class NonPositiveInput(DimentropyError):
    pass


class IllConditionedFrame(DimentropyError):
    pass


class HypothesisViolated(DimentropyError):
    """The graph transform hypothesis does not hold for a setup."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NewtonDivergence(DimentropyError):
    pass


class DomainCollapse(DimentropyError):
    pass


class RadiusTooLarge(DimentropyError):
    pass


class ZeroDimensional(DimentropyError):
    pass


class FullDimensional(DimentropyError):
    pass


class ResolutionTooLow(DimentropyError):
    pass


class SingularLinearPart(DimentropyError):
    pass


class InsufficientOrbit(DimentropyError):
    pass


class TreeBudgetExceeded(DimentropyError):
    pass


class BudgetExceeded(DimentropyError):
    pass


class EmptyInput(DimentropyError):
    pass


class DegenerateTransversal(DimentropyError):
    pass


class TooFewPoints(DimentropyError):
    pass


class ParseError(DimentropyError):
    """Config text could not be tokenised; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(DimentropyError):
    """Config parsed but violates one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
