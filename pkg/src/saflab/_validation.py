"""Input validation helpers shared by the estimators and experiment code."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_consistent_length, column_or_1d

from .exceptions import InvalidArgumentError


def check_signal(x, name="x", allow_empty=True):
    """Return ``x`` as a finite 1-D float64 array."""
    try:
        arr = column_or_1d(np.asarray(x, dtype=np.float64), warn=False)
    except ValueError as exc:
        raise InvalidArgumentError(f"{name} must be one-dimensional: {exc}") from None
    if not allow_empty and arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def check_signal_pair(x, d, allow_empty=True):
    """Validate an input/desired pair of equal length."""
    x = check_signal(x, "input", allow_empty)
    d = check_signal(d, "desired", allow_empty)
    try:
        check_consistent_length(x, d)
    except ValueError:
        raise InvalidArgumentError(
            f"input and desired lengths differ ({x.size} != {d.size})"
        ) from None
    return x, d


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_scalar(value, name, low=None, high=None, low_inclusive=True, high_inclusive=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise InvalidArgumentError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if np.isnan(value):
        raise InvalidArgumentError(f"{name} is NaN")
    if low is not None and (value < low or (value == low and not low_inclusive)):
        op = ">=" if low_inclusive else ">"
        raise InvalidArgumentError(f"{name} must be {op} {low}, got {value}")
    if high is not None and (value > high or (value == high and not high_inclusive)):
        op = "<=" if high_inclusive else "<"
        raise InvalidArgumentError(f"{name} must be {op} {high}, got {value}")
    return value


def check_taps(h, name="plant"):
    h = check_signal(h, name, allow_empty=False)
    return h
