"""Exception hierarchy.

Every error raised by the library derives from :class:`CoupledWaveError`.
Errors that signal a violated mathematical precondition (geometry, coupling,
weight parameters) additionally derive from :class:`PreconditionError`, which
the command line maps to exit code 2.
"""


class CoupledWaveError(Exception):
    """Base class for all library errors."""


class PreconditionError(CoupledWaveError):
    """A documented precondition of an operation does not hold."""


# grid / geometry
class GridError(PreconditionError):
    pass


class NestingViolation(PreconditionError):
    def __init__(self, inner, outer, detail=""):
        self.inner = inner
        self.outer = outer
        msg = f"{inner} is not compactly nested in {outer}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class X0Violation(PreconditionError):
    pass


class GridMismatch(CoupledWaveError):
    pass


# forward solver
class CflViolation(PreconditionError):
    pass


class NonFiniteState(CoupledWaveError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state detected at time step {step}")


class ZeroInitialData(PreconditionError):
    pass


class EmptySubdomain(PreconditionError):
    pass


# F.B.I. transform
class WindowOutsideSignal(PreconditionError):
    pass


class InfeasibleSlope(PreconditionError):
    pass


# weights
class MaximizerOutsideOmega0(PreconditionError):
    pass


class BetaGapViolation(PreconditionError):
    pass


class EmptyInterval(PreconditionError):
    def __init__(self, lo, hi):
        self.lo = lo
        self.hi = hi
        super().__init__(f"admissible M interval is empty: lo={lo:.6g} >= hi={hi:.6g}")


class OrderingViolation(PreconditionError):
    pass


class NonPositiveTau(PreconditionError):
    pass


class WeightOverflow(CoupledWaveError):
    def __init__(self, x, s, log_theta):
        self.x = x
        self.s = s
        self.log_theta = log_theta
        super().__init__(
            f"theta = exp({log_theta:.6g}) overflows double precision at x={x:.6g}, s={s:.6g}"
        )


# inversion
class CouplingViolation(PreconditionError):
    pass


class SolverFailure(CoupledWaveError):
    pass


class LineSearchStall(CoupledWaveError):
    pass


class ConvergenceFailure(CoupledWaveError):
    pass


# experiments / config
class ConfigError(PreconditionError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ConfigError):
    pass


class ConfigTypeError(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class InsufficientLevels(CoupledWaveError):
    pass
