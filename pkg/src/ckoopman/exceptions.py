"""Exception hierarchy shared by every module of the package."""


class CkoopmanError(Exception):
    """Base class for all package errors."""


class InputError(CkoopmanError, ValueError):
    """Invalid arguments: wrong shapes, out-of-range hyperparameters."""


class NumericalError(CkoopmanError, ArithmeticError):
    """A factorization or decomposition could not be completed."""

    def __init__(self, message, jitter_levels=()):
        super().__init__(message)
        self.jitter_levels = tuple(jitter_levels)


class SimulationError(CkoopmanError, RuntimeError):
    """Plant integration produced a non-finite or diverging state."""

    def __init__(self, message, step=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


class PredictionError(CkoopmanError, RuntimeError):
    """A model rollout left the finite range."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UnsupportedConfigurationError(CkoopmanError):
    """The requested operation is not defined for this model configuration."""


class ParseError(CkoopmanError, ValueError):
    """Malformed dataset or model file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)
        self.line = line


class ConfigError(CkoopmanError, ValueError):
    """Experiment configuration failed validation.

    ``path`` is the dotted location of the offending field, when known.
    """

    def __init__(self, message, path=None):
        if path:
            message = f'{path}: {message}'
        super().__init__(message)
        self.path = path
