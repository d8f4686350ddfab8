"""Exception hierarchy.

Every error raised by the library derives from :class:`WideError`, so callers
(the CLI in particular) can map failures to exit codes by category.
"""


class WideError(Exception):
    """Base class for all library errors."""


class ProblemError(WideError, ValueError):
    """Invalid problem data (raised before any solve)."""


class SolveError(WideError, RuntimeError):
    """A solver or oracle failed to produce a result."""


# problem-core
class NonPositiveEpsilon(ProblemError):
    pass


class UnknownEnergy(ProblemError):
    pass


class InvalidParams(ProblemError):
    pass


class InvalidProblem(ProblemError):
    pass


# wide-functional
class ConstraintViolated(ProblemError):
    pass


class NonFiniteValue(SolveError):
    pass


class NonSmoothDissipation(ProblemError):
    pass


class SingularityRisk(ProblemError):
    pass


class ShapeMismatch(ProblemError):
    pass


# minimizers
class SingularSystem(SolveError):
    pass


class MaxIterations(SolveError):
    pass


class LineSearchFailure(SolveError):
    pass


class StepTooSmall(SolveError):
    pass


class DimensionTooLarge(ProblemError):
    pass


# oracles
class StepNewtonFailure(SolveError):
    pass


class StepMinimizationFailure(SolveError):
    pass


class StabilityViolation(ProblemError):
    pass


class NodeMinimizationFailure(SolveError):
    pass


class UnknownEntry(ProblemError):
    pass


# causal-limit
class SolveFailed(SolveError):
    def __init__(self, epsilon, cause=None):
        super().__init__(f"solve failed at epsilon={epsilon!r}: {cause}")
        self.epsilon = epsilon
        self.cause = cause


class DegenerateFit(WideError):
    pass


# pde-lab
class ModeOutOfRange(ProblemError):
    pass


class InvalidGrowth(ProblemError):
    pass


# diagnostics
class GridTooShort(ProblemError):
    pass


class WrongRegime(ProblemError):
    pass


class InsufficientSweep(ProblemError):
    pass


# cli
class ConfigError(ProblemError):
    pass
