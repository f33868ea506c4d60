"""Exception hierarchy shared by the stsreach modules."""


class STSReachError(Exception):
    """Base class for all errors raised by stsreach."""


class LinearSolveFailure(STSReachError):
    """The mass matrix is numerically singular (corrupted parameters)."""


class DomainError(STSReachError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularConfiguration(STSReachError):
    """The kinematic inversion hit a singular configuration."""


class NoConvergence(STSReachError):
    """An iterative solver did not converge."""


class Infeasible(STSReachError):
    """No input inside the box reproduces the requested generalized force."""


class BlowUp(STSReachError):
    """The Riccati solution exceeded its norm ceiling."""


class IntegrationFailure(STSReachError):
    """A trajectory produced non-finite values."""


class GridMismatch(STSReachError, ValueError):
    """Trajectory bundles do not share a common time grid."""


class BudgetExhausted(STSReachError):
    """Falsification stopped before reaching a non-negative cost."""


class ValidationError(STSReachError, ValueError):
    """A scenario field violates its constraints."""


class ParseError(STSReachError, ValueError):
    """A scenario file could not be parsed."""


class StageError(STSReachError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
