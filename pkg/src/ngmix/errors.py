"""Exception taxonomy shared across the package."""


class NgmixError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(NgmixError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(NgmixError, ValueError):
    """An array argument has the wrong shape (e.g. non-square input)."""


class ParameterError(NgmixError, ValueError):
    """A distribution or model parameter violates its constraints."""


class RangeError(NgmixError, FloatingPointError):
    """A result over- or underflowed the representable range."""


class FactorizationError(NgmixError):
    """A matrix factorization failed.

    Attributes
    ----------
    pivot : int or None
        One-based index of the first non-positive pivot, when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class NumericalError(NgmixError):
    """A numerical routine failed to reach its target accuracy.

    Attributes
    ----------
    achieved : float or None
        The accuracy actually reached, when the routine can estimate it.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ConfigError(NgmixError, ValueError):
    """A configuration document is malformed or inconsistent."""


class DataError(NgmixError, ValueError):
    """An input data set fails validation."""


class DivergenceError(NgmixError):
    """The stochastic-gradient iteration diverged.

    Attributes
    ----------
    trace : object or None
        The parameter trace accumulated up to the point of failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
