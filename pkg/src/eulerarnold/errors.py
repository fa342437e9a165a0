"""Exception hierarchy.

Configuration problems and runtime failures are kept apart so the command
line can map them onto distinct exit codes.
"""


class EulerArnoldError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EulerArnoldError, ValueError):
    """Invalid model definition, parameters or input data."""


class RuntimeFailure(EulerArnoldError, RuntimeError):
    """A well-posed run that failed to produce a result."""


class StabilityError(ConfigError):
    """Requested time step violates the explicit stability bound; the run is refused."""


class BlowUpError(RuntimeFailure):
    """A state component exceeded the blow-up threshold or became non-finite."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class MassDriftError(RuntimeFailure):
    """Probability mass drifted beyond tolerance during time stepping."""


class ConvergenceError(RuntimeFailure):
    """An iterative solver failed to converge."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
