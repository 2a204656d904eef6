"""Exception types shared across the package."""


class FbsdeError(Exception):
    """Base class for all package errors."""


class NonPositiveProbability(FbsdeError):
    """A transition probability is zero or negative."""


class RowSumMismatch(FbsdeError):
    """A transition row does not sum to one within tolerance."""


class ShapeMismatch(FbsdeError):
    """An array has the wrong shape for the requested operation."""


class LeafNodeError(FbsdeError):
    """The operation needs a non-leaf node."""


class MissingValue(FbsdeError):
    """A process has no value at the requested time or node."""


class BranchOutOfRange(FbsdeError):
    """Branch index outside 1..N."""


class GeneratorEvaluationError(FbsdeError):
    """A generator returned a non-finite value."""


class NonFiniteInput(FbsdeError):
    """An input value is NaN or infinite."""


class SingularCertificate(FbsdeError):
    """The solvability certificate reports singular nodes."""


class AlphaOutOfRange(FbsdeError):
    """Blend parameter outside [0, 1]."""


class DepthExceeded(FbsdeError):
    """Recursion budget for nested level solves exhausted."""


class NonFiniteIterate(FbsdeError):
    """An iterate became NaN or infinite during Picard iteration."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class NoContraction(FbsdeError):
    """Picard increments failed to fall below tolerance within the budget."""

    def __init__(self, message, alpha=None, norms=None, iterate=None):
        super().__init__(message)
        self.alpha = alpha
        self.norms = list(norms) if norms is not None else []
        self.iterate = iterate


class StepUnderflow(FbsdeError):
    """Continuation step was halved past its floor without convergence."""

    def __init__(self, message, best_residual=None, best_solution=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_solution = best_solution


class NoConvergence(FbsdeError):
    """Newton iteration stalled; carries the best iterate found."""

    def __init__(self, message, best_residual=None, best_iterate=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_iterate = best_iterate


class SchemaError(FbsdeError):
    """A problem file is missing or misusing a field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class AssumptionViolation(FbsdeError):
    """A structural zero-sum condition on the coefficients fails."""

    def __init__(self, condition, node=None):
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"{condition}{where}")
        self.condition = condition
        self.node = node


class ExpressionError(FbsdeError):
    """Base for expression errors; carries a character offset."""

    def __init__(self, message, position):
        super().__init__(f"{message} (offset {position})")
        self.position = position


class ExpressionSyntaxError(ExpressionError):
    """Malformed expression source."""


class UnknownIdentifier(ExpressionError):
    """An identifier that is neither a variable nor a function."""

    def __init__(self, name, position):
        super().__init__(f"unknown identifier '{name}'", position)
        self.name = name


class ArityError(ExpressionError):
    """A function call with the wrong number of arguments."""

    def __init__(self, name, expected, got, position):
        super().__init__(f"{name} expects {expected} argument(s), got {got}", position)
        self.name = name
        self.expected = expected
        self.got = got


class ExpressionDomainError(ExpressionError):
    """Evaluation left the real domain (division by zero, overflow, ...)."""
