"""Exception hierarchy shared by all solver layers."""


class StackwaveError(Exception):
    """Base class for every error raised by this package."""


class HyperbolicityViolation(StackwaveError):
    """The scaled operator lost uniform coercivity (a <= 0 somewhere)."""


class OutOfDomain(StackwaveError):
    """A physical sample point lies outside the moving interval."""


class CflViolation(StackwaveError):
    """Time step too large for the explicit part of the scheme."""


class SingularStep(StackwaveError):
    """A per-step tridiagonal system could not be solved."""


class NonhomogeneousBoundary(StackwaveError):
    """A vector that must vanish at both ends does not."""


class HolmgrenViolation(StackwaveError):
    """Horizon too short for unique continuation from the control boundary."""


class ConfigError(StackwaveError):
    """Invalid run configuration."""


class NoConvergence(StackwaveError):
    """An iterative solver hit its budget.

    The best iterate and the residual history are attached so callers can
    inspect or resume.
    """

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = list(history) if history is not None else []


class GeometryGate(StackwaveError):
    """The leader solve needs both controls on one shared boundary segment."""
