"""Exception types shared across the package."""


class FimError(Exception):
    """Base class for all package errors."""


class ValidationError(FimError, ValueError):
    """Invalid model definition, parameter or configuration."""


class NumericError(FimError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class NonErgodic(NumericError):
    """The lifted history chain has no unique stationary distribution."""


class SizeOverflow(NumericError):
    """Exact enumeration would exceed the configured entry cap."""


class BoundaryTheta(ValidationError):
    """Parameter too close to its domain edge for the finite-difference step."""


class SingularCovariance(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class InvalidVariance(NumericError):
    pass


class Indeterminate(NumericError):
    """Ratio of two vanishing quantities."""


class DecompositionError(NumericError):
    """Markov decomposition disagrees with the brute-force joint value."""


class OverflowRisk(NumericError):
    """Boltzmann exponents too large for a reliable transfer matrix."""


class TooShort(ValidationError):
    pass


class NoFiniteLikelihood(NumericError):
    pass
