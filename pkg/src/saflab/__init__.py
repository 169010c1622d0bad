"""Subband adaptive filtering under errors-in-variables and impulsive noise."""

from .exceptions import (
    DegeneratePlantError,
    DivergenceWarning,
    InvalidArgumentError,
    NoLocalMinimumError,
    NonFiniteWarning,
    ThetaUndefinedError,
    UnstableStepError,
    UnsupportedFormatError,
)
from .metrics import nmsd

__version__ = "0.1.0"
