"""Exception types shared across the package."""


class HamflowError(Exception):
    """Base class for all package errors."""


class DimensionError(HamflowError, ValueError):
    """Input shapes do not match the model dimension."""


class InvalidMixtureError(HamflowError, ValueError):
    pass


class UnsupportedError(HamflowError, NotImplementedError):
    """Operation is not defined for the given object (e.g. energy of a learned force)."""


class DegenerateError(HamflowError, ValueError):
    pass


class DivergenceError(HamflowError, FloatingPointError):
    """Numerical state became non-finite or exceeded the divergence guard.

    ``step`` is the integrator step or training iteration at which it happened.
    """

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class TapeError(HamflowError, RuntimeError):
    pass


class ConfigError(HamflowError, ValueError):
    pass


class IntegrityError(HamflowError, ValueError):
    """A checkpoint failed its payload hash check."""
