"""Exception and warning types raised by saflab."""


class InvalidArgumentError(ValueError):
    """A parameter or input violates a documented precondition."""


class UnsupportedFormatError(ValueError):
    """Audio file is readable but not mono 16-bit PCM."""


class ThetaUndefinedError(InvalidArgumentError):
    """The noise-variance ratio is undefined (zero input-noise variance)."""


class NoLocalMinimumError(ArithmeticError):
    """The Hessian at the plant is not positive definite."""


class UnstableStepError(ArithmeticError):
    """The step size puts the transition matrix on or outside the unit circle."""


class DegeneratePlantError(InvalidArgumentError):
    """The reference plant has zero norm, so NMSD is undefined."""


class NonFiniteWarning(RuntimeWarning):
    """A frame carried non-finite values; the filter state was left unchanged."""


class DivergenceWarning(RuntimeWarning):
    """A Monte-Carlo trial exceeded the divergence threshold."""
