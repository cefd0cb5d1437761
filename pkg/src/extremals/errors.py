"""Exception types shared across the package."""


class ExtremalsError(Exception):
    """Base class for all package-specific errors."""


class ParseError(ExtremalsError):
    """Syntax or symbol error in the expression grammar, with position."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


class ExpressionGrowthError(ExtremalsError):
    """Symbolic expression exceeded the node-count cap."""


class EvaluationError(ExtremalsError):
    """Expression evaluated to a non-finite value."""


class DimensionError(ExtremalsError):
    """Inconsistent dimensions between fields, states, or controls."""


class GridMismatchError(ExtremalsError):
    """Two control paths live on incompatible grids."""


class DivergenceError(ExtremalsError):
    """Trajectory norm exceeded the blow-up guard during integration."""

    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class DiffeomorphismViolationError(ExtremalsError):
    """Newton could not invert the fiber derivative of the Lagrangian.

    Signals that d_uL(x, .) is not behaving like a diffeomorphism at the
    offending point: either the fiber Hessian went singular or the damped
    iteration stagnated.
    """

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class NonConvergenceError(ExtremalsError):
    """Shooting Newton exhausted its iterations.

    Carries the best residual seen so callers can report how close the
    solver got.
    """

    def __init__(self, message, best_residual=None, best_p0=None):
        self.best_residual = best_residual
        self.best_p0 = best_p0
        super().__init__(message)


class BasisDeficiencyError(ExtremalsError):
    """Dictionary exhausted before a full-rank basis was selected."""


class ChartConstructionError(ExtremalsError):
    """Trust-region radius search underflowed; no chart exists here."""


class ChartIntegrityError(ExtremalsError):
    """A certified chart failed one of its own guarantees at evaluation."""


class ScenarioError(ExtremalsError):
    """Scenario file is malformed or internally inconsistent."""


class CertificateFailure(ExtremalsError):
    """A regularity certificate did not certify."""
