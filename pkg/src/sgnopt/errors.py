"""Exception types shared across the toolkit."""
from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ToolkitError, ValueError):
    """Operands have incompatible shapes."""


class TripletIndexError(ToolkitError, IndexError):
    """A triplet entry lies outside the declared matrix shape."""

    def __init__(self, position: int, row: int, col: int, rows: int, cols: int):
        self.position = position
        self.row = row
        self.col = col
        super().__init__(
            f"triplet entry #{position} at ({row}, {col}) is outside a "
            f"{rows}x{cols} matrix"
        )


class SingularMatrix(ToolkitError):
    """Factorization hit a structurally or numerically singular matrix.

    ``pivot_index`` is the offending row/column when it can be identified,
    -1 when the backend reports singularity without a location.
    """

    def __init__(self, message: str, pivot_index: int = -1):
        self.pivot_index = pivot_index
        super().__init__(message)


class NotPositiveDefinite(ToolkitError):
    """Dense Cholesky failed; ``pivot_index`` is the failing pivot (0-based)."""

    def __init__(self, message: str, pivot_index: int = -1):
        self.pivot_index = pivot_index
        super().__init__(message)


class NoConvergence(ToolkitError):
    """An iterative procedure exhausted its iteration budget."""

    def __init__(self, message: str, residual: float = float("nan"),
                 iterations: int = 0, best=None):
        self.residual = residual
        self.iterations = iterations
        self.best = best
        super().__init__(message)


class NegativeCurvature(ToolkitError):
    """CG met a direction with non-positive curvature; ``best`` is the last iterate."""

    def __init__(self, message: str, best=None, iterations: int = 0):
        self.best = best
        self.iterations = iterations
        super().__init__(message)


class SingularConstraintJacobian(SingularMatrix):
    """The state Jacobian of the equilibrium constraints is singular."""


class NonSquareParamJacobian(ToolkitError):
    """Block substitution requires a square, invertible parameter Jacobian."""


class CapabilityMissing(ToolkitError):
    """A problem does not provide an optional evaluator."""

    def __init__(self, capability: str):
        self.capability = capability
        super().__init__(f"problem does not provide '{capability}'")


class ForwardSimFailure(ToolkitError):
    """The forward simulation failed to produce an equilibrium state."""


class LineSearchFailure(ToolkitError):
    """Backtracking exhausted its budget without sufficient decrease."""


class MeritLineSearchFailure(LineSearchFailure):
    """Backtracking on the L1 merit function failed."""


class InfeasiblePoint(ToolkitError):
    """A point violates its declared bounds."""


class NumericalBlowup(ToolkitError):
    """Time integration produced a non-finite or runaway state."""

    def __init__(self, message: str, step: int = -1):
        self.step = step
        super().__init__(message)
