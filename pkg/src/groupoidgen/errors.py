"""Exception types shared across the package."""


class GroupoidGenError(Exception):
    """Base class for all errors raised by this package."""


class DomainExitError(GroupoidGenError):
    """A trajectory left the configured coordinate box.

    Attributes
    ----------
    exit_time : float
        First integration time at which the box was violated.
    """

    def __init__(self, message, exit_time=None):
        super().__init__(message)
        self.exit_time = exit_time


class OutsideLocalDomainError(GroupoidGenError):
    """An implicit solve did not converge; the input is (numerically)
    outside the local domain of the germ-level construction.

    Attributes
    ----------
    residual : float
        Final residual norm of the failed solve.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonComposableError(GroupoidGenError):
    """Two groupoid elements fail the source/target matching condition."""


class IterationDivergedError(GroupoidGenError):
    """A fixed-point iteration stopped contracting before convergence."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IntegrationToleranceError(GroupoidGenError):
    """Richardson step-halving estimate exceeded the configured tolerance."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class NotASolutionError(GroupoidGenError):
    """A reconstructed sigma-model field violates the defining PDE
    beyond tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SignUndeterminedError(GroupoidGenError):
    """Probe evaluation could not fix the sign relating a network symbol
    to its Kontsevich-graph symbol (both vanish on all probes)."""
