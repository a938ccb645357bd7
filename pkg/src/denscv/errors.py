"""Exception hierarchy shared across the package."""


class DensCvError(Exception):
    """Base class for all package errors."""


class InvalidInputs(DensCvError, ValueError):
    """Arguments violate a documented precondition."""


class NonFiniteIntegrand(DensCvError, FloatingPointError):
    """A density returned NaN or infinity on a quadrature grid."""


class EmptyTrainingSet(DensCvError):
    """An estimator was asked to fit on zero observations."""


class InsufficientTrainingData(DensCvError):
    """Training sample is too small for the requested model size."""


class EmptyHoldout(DensCvError):
    """Holdout scoring requires at least one evaluation point."""


class BadSplitSizes(DensCvError):
    """Split sizes must satisfy 1 <= n1 < n."""


class NoProcedures(DensCvError):
    """Selection requires at least one fitted procedure."""


class MismatchedInputs(DensCvError):
    """Paired per-replicate inputs do not line up."""


class DataError(DensCvError):
    """A user-supplied data file is missing or malformed (CLI exit code 2)."""


class ConfigError(DensCvError):
    """A config file or override is invalid (CLI exit code 3)."""
