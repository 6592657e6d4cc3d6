"""Exception hierarchy shared by all modules."""


class FracParabolicError(Exception):
    """Base class for library errors."""


class ConfigurationError(FracParabolicError, ValueError):
    """Invalid parameters or malformed configuration."""


class PreconditionError(FracParabolicError, ValueError):
    """An input violates a documented precondition (e.g. not dissipative)."""


class EvaluationError(FracParabolicError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class UnsupportedRegionError(EvaluationError):
    """Argument lies outside the region the evaluator supports."""


class DivergenceError(EvaluationError):
    """An iteration stopped contracting."""


class InsufficientDataError(FracParabolicError, ValueError):
    """Not enough admissible samples to fit a bound."""


class DomainBoundaryError(FracParabolicError, IndexError):
    """A finite-difference stencil would leave the grid."""


class SingularPointError(PreconditionError):
    """Evaluation requested at a point where the kernel is singular."""
